from django.conf import settings
from rest_framework import serializers

from .encoder import ModelConfig, SCALE_MODES
from .exceptions import ConfigError
from .models import TrainingRun, StageCheckpoint, BenchReport, BenchRow
from .pipeline import PRESETS, STAGES, make_plan


def engine_default(key):
    return settings.MAGIC_PYRAMID[key]


# ---------------------------------------------------------------------------
# Run configs and corpus records
# ---------------------------------------------------------------------------

class ModelConfigSerializer(serializers.Serializer):
    layers = serializers.IntegerField(min_value=2, default=4)
    hidden = serializers.IntegerField(min_value=1, default=32)
    heads = serializers.IntegerField(min_value=1, default=4)
    ffn = serializers.IntegerField(min_value=1, default=128)
    classes = serializers.IntegerField(min_value=2, default=2)
    vocab = serializers.IntegerField(min_value=2, default=64)
    max_len = serializers.IntegerField(min_value=1, default=128)
    sub_hidden = serializers.IntegerField(min_value=0, default=0)
    sub_heads = serializers.IntegerField(min_value=1, default=1)
    sub_ffn = serializers.IntegerField(min_value=0, default=0)
    attention_scale = serializers.ChoiceField(choices=SCALE_MODES, required=False)

    def validate(self, attrs):
        attrs.setdefault('attention_scale', engine_default('ATTENTION_SCALE'))
        if not attrs['sub_hidden']:
            attrs['sub_hidden'] = max(1, int(attrs['hidden'] * engine_default('SUB_WIDTH_RATIO')))
        try:
            attrs['config'] = ModelConfig(**attrs)
        except ConfigError as exc:
            raise serializers.ValidationError(str(exc))
        return attrs


class EpochsSerializer(serializers.Serializer):
    regular = serializers.IntegerField(min_value=0, default=3)
    soft = serializers.IntegerField(min_value=0, default=1)
    hard = serializers.IntegerField(min_value=0, default=2)
    sub = serializers.IntegerField(min_value=0, default=2)


class TrainPlanSerializer(serializers.Serializer):
    preset = serializers.ChoiceField(choices=sorted(PRESETS), default='mp')
    epochs = EpochsSerializer(required=False)
    learning_rate = serializers.FloatField(min_value=0, required=False)
    batch_size = serializers.IntegerField(min_value=1, required=False)
    delta_final = serializers.FloatField(min_value=0, required=False)
    temperature = serializers.FloatField(required=False)
    l1_weight = serializers.FloatField(min_value=0, required=False)
    tau_grid = serializers.ListField(child=serializers.FloatField(min_value=0, max_value=1),
                                     allow_empty=False, required=False)
    seed = serializers.IntegerField(required=False)
    mp_mode = serializers.BooleanField(required=False)

    def validate(self, attrs):
        epochs = attrs.pop('epochs', None) or {}
        epochs = {stage: epochs.get(stage, default) for stage, default in zip(STAGES, (3, 1, 2, 2))}
        hyper = {
            'learning_rate': attrs.get('learning_rate', engine_default('LEARNING_RATE')),
            'batch_size': attrs.get('batch_size', engine_default('BATCH_SIZE')),
            'delta_final': attrs.get('delta_final', engine_default('DELTA_FINAL')),
            'temperature': attrs.get('temperature', engine_default('TEMPERATURE')),
            'l1_weight': attrs.get('l1_weight', engine_default('L1_WEIGHT')),
            'tau_grid': tuple(attrs.get('tau_grid', engine_default('TAU_GRID'))),
            'seed': attrs.get('seed', engine_default('SEED')),
        }
        if 'mp_mode' in attrs:
            hyper['mp_mode'] = attrs['mp_mode']
        try:
            attrs['plan'] = make_plan(attrs['preset'], **epochs, **hyper)
        except ConfigError as exc:
            raise serializers.ValidationError(str(exc))
        return attrs


class CorpusPathsSerializer(serializers.Serializer):
    train = serializers.CharField()
    test = serializers.CharField(required=False)
    format = serializers.ChoiceField(choices=['jsonl', 'tsv'], required=False)


class RunConfigSerializer(serializers.Serializer):
    name = serializers.CharField(max_length=200, default='run')
    model = ModelConfigSerializer(required=False)
    plan = TrainPlanSerializer(required=False)
    corpus = CorpusPathsSerializer()
    output_dir = serializers.CharField(required=False)

    def validate(self, attrs):
        if 'model' not in attrs:
            attrs['model'] = self._nested('model', ModelConfigSerializer)
        if 'plan' not in attrs:
            attrs['plan'] = self._nested('plan', TrainPlanSerializer)
        return attrs

    def _nested(self, field, serializer_class):
        serializer = serializer_class(data={})
        if not serializer.is_valid():
            raise serializers.ValidationError({field: serializer.errors})
        return serializer.validated_data


class CorpusRecordSerializer(serializers.Serializer):
    ids = serializers.ListField(child=serializers.IntegerField(min_value=1), allow_empty=False)
    label = serializers.IntegerField(min_value=0)

    def validate_label(self, value):
        classes = self.context.get('classes')
        if classes is not None and value >= classes:
            raise serializers.ValidationError(f"label {value} outside {classes} classes")
        return value

    def validate_ids(self, value):
        vocab = self.context.get('vocab')
        if vocab is not None and max(value) >= vocab:
            raise serializers.ValidationError(f"token id {max(value)} outside vocab of {vocab}")
        return value


# ---------------------------------------------------------------------------
# Run registry
# ---------------------------------------------------------------------------

class StageCheckpointSerializer(serializers.ModelSerializer):
    stage_display = serializers.CharField(source='get_stage_display', read_only=True)

    class Meta:
        model = StageCheckpoint
        fields = ('id', 'run', 'index', 'stage', 'stage_display', 'epochs', 'final_loss', 'path', 'created_at')


class TrainingRunSerializer(serializers.ModelSerializer):
    checkpoints = StageCheckpointSerializer(many=True, read_only=True)

    class Meta:
        model = TrainingRun
        fields = ('id', 'name', 'preset', 'seed', 'status', 'error', 'config', 'output_dir',
                  'checkpoints', 'created_at', 'updated_at')


class BenchRowSerializer(serializers.ModelSerializer):
    class Meta:
        model = BenchRow
        fields = ('id', 'report', 'method', 'tau', 'bucket', 'count', 'mean_gflops', 'speedup',
                  'accuracy', 'mean_exit_layer', 'note')


class BenchReportSerializer(serializers.ModelSerializer):
    row_count = serializers.SerializerMethodField()

    class Meta:
        model = BenchReport
        fields = ('id', 'checkpoint', 'corpus', 'methods', 'tau_grid', 'output_dir', 'row_count', 'created_at')

    def get_row_count(self, obj):
        return obj.rows.count()
