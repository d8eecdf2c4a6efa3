from django.shortcuts import get_object_or_404
from rest_framework import serializers, viewsets, status
from rest_framework.response import Response
from rest_framework.decorators import action

from .exceptions import ConfigError
from .experiment_config import parse_experiment_config
from .harness import summarize_replications
from .models import AuditLog, ExperimentRun, ReplicationResult
from .tasks import run_experiment_task


class ExperimentRunSerializer(serializers.ModelSerializer):
    class Meta:
        model = ExperimentRun
        fields = ['id', 'name', 'status', 'seed', 'threads', 'config_hash', 'output_dir', 'error',
                  'created_at', 'started_at', 'finished_at', 'wall_time']
        read_only_fields = fields


class CreateRunSerializer(serializers.Serializer):
    name = serializers.CharField(max_length=100, required=False)
    config = serializers.DictField(default=dict)
    seed = serializers.IntegerField(min_value=0, required=False)

    def validate(self, attrs):
        try:
            config = parse_experiment_config(attrs['config'])
            if 'seed' in attrs:
                config = config.with_overrides(seed=attrs['seed'])
        except ConfigError as e:
            raise serializers.ValidationError({'config': str(e)})
        attrs['parsed'] = config
        return attrs

    def create(self, validated_data):
        config = validated_data['parsed']
        return ExperimentRun.objects.create(
            name=validated_data.get('name') or config.name,
            config=config.to_dict(),
            config_hash=config.config_hash,
            seed=config.seed,
        )


class ReplicationResultSerializer(serializers.ModelSerializer):
    class Meta:
        model = ReplicationResult
        fields = ['method', 'beta', 'rho', 'n', 'horizon', 'replication', 'seed',
                  'disc_outcome', 'avg_harm', 'avg_harm_indicator_variant']


class ExperimentRunViewSet(viewsets.ViewSet):
    def list(self, request):
        runs = ExperimentRun.objects.all()
        serializer = ExperimentRunSerializer(runs, many=True)
        return Response(serializer.data)

    def retrieve(self, request, pk=None):
        run = get_object_or_404(ExperimentRun, pk=pk)
        return Response(ExperimentRunSerializer(run).data)

    def create(self, request):
        serializer = CreateRunSerializer(data=request.data)
        if serializer.is_valid():
            run = serializer.save()
            AuditLog.objects.create(
                user=request.user if request.user.is_authenticated else None,
                action="Experiment Queued", target=run.name, details=f"config {run.config_hash[:12]}",
            )
            run_experiment_task.delay(run.pk)
            return Response(ExperimentRunSerializer(run).data, status=status.HTTP_201_CREATED)
        return Response(serializer.errors, status=status.HTTP_400_BAD_REQUEST)

    @action(detail=True, methods=['get'])
    def results(self, request, pk=None):
        run = get_object_or_404(ExperimentRun, pk=pk)
        serializer = ReplicationResultSerializer(run.results.all(), many=True)
        return Response(serializer.data)

    @action(detail=True, methods=['get'])
    def summary(self, request, pk=None):
        run = get_object_or_404(ExperimentRun, pk=pk)
        summary = summarize_replications([r.as_row() for r in run.results.all()])
        # NaN is not valid JSON
        summary = summary.astype(object).where(summary.notna(), None)
        return Response(summary.to_dict(orient='records'))
