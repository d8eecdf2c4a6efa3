from django.contrib import admin
from .models import ExperimentRun, ReplicationResult, AuditLog
from .tasks import run_experiment_task


class ReplicationResultInline(admin.TabularInline):
    model = ReplicationResult
    extra = 0
    can_delete = False
    readonly_fields = ('method', 'beta', 'rho', 'n', 'replication', 'disc_outcome', 'avg_harm', 'avg_harm_indicator_variant')
    fields = readonly_fields


@admin.register(ExperimentRun)
class ExperimentRunAdmin(admin.ModelAdmin):
    list_display = ('name', 'status', 'seed', 'config_hash', 'created_at', 'wall_time')
    list_filter = ('status',)
    search_fields = ('name', 'config_hash')
    readonly_fields = ('config_hash', 'started_at', 'finished_at', 'wall_time', 'error')
    inlines = [ReplicationResultInline]
    actions = ['requeue']

    def requeue(self, request, queryset):
        for run in queryset:
            run.status = 'pending'
            run.save(update_fields=['status'])
            run_experiment_task.delay(run.pk)


@admin.register(ReplicationResult)
class ReplicationResultAdmin(admin.ModelAdmin):
    list_display = ('run', 'method', 'beta', 'rho', 'n', 'replication', 'disc_outcome', 'avg_harm')
    list_filter = ('method', 'run')


@admin.register(AuditLog)
class AuditLogAdmin(admin.ModelAdmin):
    list_display = ('timestamp', 'user', 'action', 'target')
