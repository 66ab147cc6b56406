from django_filters.rest_framework import DjangoFilterBackend
from rest_framework import viewsets, filters
from rest_framework.permissions import AllowAny

from .models import TrainingRun, StageCheckpoint, BenchReport, BenchRow
from .serializers import (TrainingRunSerializer, StageCheckpointSerializer,
                          BenchReportSerializer, BenchRowSerializer)


class TrainingRunViewSet(viewsets.ReadOnlyModelViewSet):
    queryset = TrainingRun.objects.prefetch_related('checkpoints')
    serializer_class = TrainingRunSerializer
    permission_classes = [AllowAny]
    filter_backends = [DjangoFilterBackend, filters.SearchFilter, filters.OrderingFilter]
    filterset_fields = ['preset', 'status', 'seed']
    search_fields = ['name', 'output_dir']
    ordering_fields = ['created_at', 'name']


class StageCheckpointViewSet(viewsets.ReadOnlyModelViewSet):
    queryset = StageCheckpoint.objects.select_related('run')
    serializer_class = StageCheckpointSerializer
    permission_classes = [AllowAny]
    filter_backends = [DjangoFilterBackend, filters.OrderingFilter]
    filterset_fields = ['run', 'stage']
    ordering_fields = ['index', 'final_loss', 'created_at']


class BenchReportViewSet(viewsets.ReadOnlyModelViewSet):
    queryset = BenchReport.objects.all()
    serializer_class = BenchReportSerializer
    permission_classes = [AllowAny]
    filter_backends = [filters.SearchFilter, filters.OrderingFilter]
    search_fields = ['checkpoint', 'corpus']
    ordering_fields = ['created_at']


class BenchRowViewSet(viewsets.ReadOnlyModelViewSet):
    queryset = BenchRow.objects.all()
    serializer_class = BenchRowSerializer
    permission_classes = [AllowAny]
    filter_backends = [DjangoFilterBackend, filters.OrderingFilter]
    filterset_fields = ['report', 'method', 'bucket', 'tau']
    ordering_fields = ['speedup', 'mean_gflops', 'accuracy', 'tau']
