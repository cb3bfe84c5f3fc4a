from django.db import models
from django.utils import timezone


class ExperimentRun(models.Model):
    """Ledger entry for one management-command run"""
    STATUS_CHOICES = [
        ('running', 'Running'),
        ('completed', 'Completed'),
        ('failed', 'Failed'),
    ]

    run_id = models.CharField(max_length=100)
    command = models.CharField(max_length=20)
    seed = models.BigIntegerField()
    config_digest = models.CharField(max_length=64)
    manifest_digest = models.CharField(max_length=64, blank=True, default='')
    out_dir = models.CharField(max_length=500)
    status = models.CharField(max_length=10, choices=STATUS_CHOICES, default='running')
    summary = models.JSONField(default=dict, blank=True)
    error = models.TextField(blank=True, default='')
    exit_code = models.IntegerField(null=True, blank=True)
    started_at = models.DateTimeField(auto_now_add=True)
    finished_at = models.DateTimeField(null=True, blank=True)

    class Meta:
        db_table = 'experiment_run'
        ordering = ['-started_at']
        verbose_name = 'Experiment Run'
        verbose_name_plural = 'Experiment Runs'

    def __str__(self):
        return f"{self.command} {self.run_id} ({self.status})"

    def is_completed(self):
        return self.status == 'completed'

    def mark_completed(self, manifest_digest, summary=None):
        self.status = 'completed'
        self.manifest_digest = manifest_digest
        self.summary = summary or {}
        self.exit_code = 0
        self.finished_at = timezone.now()
        self.save()

    def mark_failed(self, exc):
        """Store the one-line diagnostic and exit code of a failed run"""
        self.status = 'failed'
        self.error = exc.diagnostic() if hasattr(exc, 'diagnostic') else str(exc)
        self.exit_code = getattr(exc, 'exit_code', 1)
        self.finished_at = timezone.now()
        self.save()
