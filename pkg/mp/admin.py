from django.contrib import admin
from .models import TrainingRun, StageCheckpoint, BenchReport, BenchRow


class StageCheckpointInline(admin.TabularInline):
    model = StageCheckpoint
    extra = 0


@admin.register(TrainingRun)
class TrainingRunAdmin(admin.ModelAdmin):
    list_display = ('name', 'preset', 'seed', 'status', 'created_at')
    list_filter = ('preset', 'status')
    search_fields = ('name', 'output_dir')
    inlines = [StageCheckpointInline]


@admin.register(StageCheckpoint)
class StageCheckpointAdmin(admin.ModelAdmin):
    list_display = ('run', 'index', 'stage', 'epochs', 'final_loss')
    list_filter = ('stage',)
    search_fields = ('run__name', 'path')


class BenchRowInline(admin.TabularInline):
    model = BenchRow
    extra = 0


@admin.register(BenchReport)
class BenchReportAdmin(admin.ModelAdmin):
    list_display = ('id', 'checkpoint', 'corpus', 'created_at')
    search_fields = ('checkpoint', 'corpus')
    inlines = [BenchRowInline]


@admin.register(BenchRow)
class BenchRowAdmin(admin.ModelAdmin):
    list_display = ('report', 'method', 'tau', 'bucket', 'count', 'speedup', 'accuracy')
    list_filter = ('method', 'bucket')
