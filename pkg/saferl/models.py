import math

from django.contrib.auth.models import User
from django.db import models, transaction
from django.utils import timezone


class ExperimentRun(models.Model):
    STATUS_CHOICES = [
        ('pending', 'Pending'),
        ('running', 'Running'),
        ('finished', 'Finished'),
        ('failed', 'Failed'),
    ]

    name = models.CharField(max_length=100)
    config = models.JSONField(help_text="Normalised experiment config document")
    config_hash = models.CharField(max_length=64, blank=True)
    seed = models.BigIntegerField(default=0)
    threads = models.PositiveIntegerField(default=1)
    status = models.CharField(max_length=20, choices=STATUS_CHOICES, default='pending')
    output_dir = models.CharField(max_length=500, blank=True)
    error = models.TextField(blank=True)
    created_at = models.DateTimeField(auto_now_add=True)
    started_at = models.DateTimeField(null=True, blank=True)
    finished_at = models.DateTimeField(null=True, blank=True)
    wall_time = models.FloatField(null=True, blank=True)

    class Meta:
        ordering = ['-created_at']

    def __str__(self):
        return f"{self.name} ({self.status})"

    def mark_running(self):
        self.status = 'running'
        self.started_at = timezone.now()
        self.error = ''
        self.save(update_fields=['status', 'started_at', 'error'])

    def mark_failed(self, error):
        self.status = 'failed'
        self.error = str(error)
        self.finished_at = timezone.now()
        self.save(update_fields=['status', 'error', 'finished_at'])

    @transaction.atomic
    def record_result(self, result, output_dir=''):
        """Replace this run's rows with those of an ExperimentResult and mark it finished."""
        self.results.all().delete()
        if result.config.is_offline:
            rows = [
                ReplicationResult(
                    run=self, method=r['method'], beta=r['beta'], rho=r['rho'], n=r['N'], horizon=r['T'],
                    replication=0, seed=r['seed'], disc_outcome=r['wis_outcome'], avg_harm=r['wis_harm'],
                )
                for r in result.offline_rows
            ]
        else:
            rows = [
                ReplicationResult(
                    run=self, method=r['method'], beta=r['beta'], rho=r['rho'], n=r['N'], horizon=r['T'],
                    replication=r['replication'], seed=r['seed'], disc_outcome=r['disc_outcome'],
                    avg_harm=r['avg_harm'], avg_harm_indicator_variant=r['avg_harm_indicator_variant'],
                )
                for r in result.rows
            ]
        ReplicationResult.objects.bulk_create(rows)

        for failure in result.failures:
            AuditLog.objects.create(
                action="Replication Failed", target=self.name,
                details=f"N={failure.n} replication={failure.replication}: {failure.error_type}: {failure.message}",
            )

        self.status = 'finished'
        self.config_hash = result.config.config_hash
        self.output_dir = str(output_dir)
        self.wall_time = result.wall_time
        self.finished_at = timezone.now()
        self.save()
        return len(rows)


class ReplicationResult(models.Model):
    """One method x beta x rho x N x replication row of a run."""
    run = models.ForeignKey(ExperimentRun, on_delete=models.CASCADE, related_name='results')
    method = models.CharField(max_length=20)
    beta = models.FloatField()
    rho = models.FloatField()
    n = models.PositiveIntegerField(verbose_name='N')
    horizon = models.PositiveIntegerField(verbose_name='T')
    replication = models.PositiveIntegerField(default=0)
    seed = models.BigIntegerField(default=0)
    disc_outcome = models.FloatField()
    avg_harm = models.FloatField()
    avg_harm_indicator_variant = models.FloatField(null=True, blank=True)

    class Meta:
        ordering = ['n', 'replication', 'rho', 'beta', 'method']

    def __str__(self):
        return f"{self.method} beta={self.beta} N={self.n} r={self.replication}"

    def as_row(self):
        indicator = self.avg_harm_indicator_variant
        return {
            'method': self.method, 'beta': self.beta, 'rho': self.rho, 'N': self.n, 'T': self.horizon,
            'replication': self.replication, 'seed': self.seed, 'disc_outcome': self.disc_outcome,
            'avg_harm': self.avg_harm,
            'avg_harm_indicator_variant': math.nan if indicator is None else indicator,
        }


class AuditLog(models.Model):
    user = models.ForeignKey(User, on_delete=models.SET_NULL, null=True, blank=True)
    action = models.CharField(max_length=255)
    target = models.CharField(max_length=255)
    timestamp = models.DateTimeField(auto_now_add=True)
    details = models.TextField(blank=True)

    def __str__(self):
        return f"{self.timestamp:%Y-%m-%d %H:%M} {self.action} {self.target}"
