from django.db import models


class TrainingRun(models.Model):
    """One invocation of train, finetune or ablate"""

    created_at = models.DateTimeField(auto_now_add=True)
    command = models.CharField(max_length=32)
    seed = models.IntegerField(default=0)
    variant = models.CharField(max_length=16, default="point")
    ablations = models.JSONField(default=list, blank=True)
    config_hash = models.CharField(max_length=64, db_index=True)
    config = models.JSONField(default=dict)
    output_dir = models.CharField(max_length=512)
    best_epoch = models.IntegerField(null=True, blank=True)
    metrics = models.JSONField(default=dict, blank=True)
    artifact_version = models.CharField(max_length=16)

    class Meta:
        ordering = ["-created_at"]

    def __str__(self):
        return f"{self.command} {self.config_hash[:12]} seed={self.seed}"


class EvaluationRecord(models.Model):
    run = models.ForeignKey(TrainingRun, on_delete=models.SET_NULL, null=True, blank=True,
                            related_name="evaluations")
    created_at = models.DateTimeField(auto_now_add=True)
    checkpoint = models.CharField(max_length=512)
    split = models.CharField(max_length=8, default="test")
    mask_pattern = models.CharField(max_length=8, blank=True)
    ratio = models.FloatField(default=0.0)
    seed = models.IntegerField(default=0)
    metrics = models.JSONField(default=dict)

    class Meta:
        ordering = ["-created_at"]

    def __str__(self):
        mask = f" {self.mask_pattern}@{self.ratio:g}" if self.mask_pattern else ""
        return f"{self.split}{mask} {self.checkpoint}"
