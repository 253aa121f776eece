import django.db.models.deletion
from django.db import migrations, models


class Migration(migrations.Migration):

    initial = True

    dependencies = []

    operations = [
        migrations.CreateModel(
            name="TrainingRun",
            fields=[
                ("id", models.BigAutoField(auto_created=True, primary_key=True, serialize=False, verbose_name="ID")),
                ("created_at", models.DateTimeField(auto_now_add=True)),
                ("command", models.CharField(max_length=32)),
                ("seed", models.IntegerField(default=0)),
                ("variant", models.CharField(default="point", max_length=16)),
                ("ablations", models.JSONField(blank=True, default=list)),
                ("config_hash", models.CharField(db_index=True, max_length=64)),
                ("config", models.JSONField(default=dict)),
                ("output_dir", models.CharField(max_length=512)),
                ("best_epoch", models.IntegerField(blank=True, null=True)),
                ("metrics", models.JSONField(blank=True, default=dict)),
                ("artifact_version", models.CharField(max_length=16)),
            ],
            options={"ordering": ["-created_at"]},
        ),
        migrations.CreateModel(
            name="EvaluationRecord",
            fields=[
                ("id", models.BigAutoField(auto_created=True, primary_key=True, serialize=False, verbose_name="ID")),
                ("created_at", models.DateTimeField(auto_now_add=True)),
                ("checkpoint", models.CharField(max_length=512)),
                ("split", models.CharField(default="test", max_length=8)),
                ("mask_pattern", models.CharField(blank=True, max_length=8)),
                ("ratio", models.FloatField(default=0.0)),
                ("seed", models.IntegerField(default=0)),
                ("metrics", models.JSONField(default=dict)),
                (
                    "run",
                    models.ForeignKey(
                        blank=True,
                        null=True,
                        on_delete=django.db.models.deletion.SET_NULL,
                        related_name="evaluations",
                        to="forecasting.trainingrun",
                    ),
                ),
            ],
            options={"ordering": ["-created_at"]},
        ),
    ]
