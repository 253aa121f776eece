from django.contrib import admin
from .models import EvaluationRecord, TrainingRun


@admin.register(TrainingRun)
class TrainingRunAdmin(admin.ModelAdmin):
    list_display = ("created_at", "command", "variant", "seed", "best_epoch", "config_hash")
    list_filter = ("command", "variant")
    search_fields = ("config_hash", "output_dir")


@admin.register(EvaluationRecord)
class EvaluationRecordAdmin(admin.ModelAdmin):
    list_display = ("created_at", "split", "mask_pattern", "ratio", "seed", "checkpoint")
    list_filter = ("split", "mask_pattern")
