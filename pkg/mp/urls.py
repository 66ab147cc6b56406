from django.urls import path, include
from rest_framework.routers import DefaultRouter
from .views import TrainingRunViewSet, StageCheckpointViewSet, BenchReportViewSet, BenchRowViewSet

router = DefaultRouter()
router.register(r'runs', TrainingRunViewSet)
router.register(r'checkpoints', StageCheckpointViewSet)
router.register(r'reports', BenchReportViewSet)
router.register(r'rows', BenchRowViewSet)

urlpatterns = [
    path('', include(router.urls)),
]
