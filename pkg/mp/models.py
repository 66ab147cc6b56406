from django.db import models


class TrainingRun(models.Model):
    STATUS_CHOICES = [
        ('running', 'Running'),
        ('completed', 'Completed'),
        ('failed', 'Failed'),
    ]

    name = models.CharField(max_length=200)
    preset = models.CharField(max_length=20)
    seed = models.IntegerField(default=0)
    config = models.JSONField(default=dict)
    status = models.CharField(max_length=20, choices=STATUS_CHOICES, default='running')
    error = models.TextField(blank=True)
    output_dir = models.CharField(max_length=500)
    created_at = models.DateTimeField(auto_now_add=True)
    updated_at = models.DateTimeField(auto_now=True)

    class Meta:
        ordering = ['-created_at']

    def __str__(self):
        return f"{self.name} ({self.preset}, seed {self.seed})"


class StageCheckpoint(models.Model):
    STAGE_CHOICES = [
        ('regular', 'Regular training'),
        ('soft', 'Soft pruning'),
        ('hard', 'Hard pruning'),
        ('sub', 'Sub-classifier training'),
    ]

    run = models.ForeignKey(TrainingRun, related_name='checkpoints', on_delete=models.CASCADE)
    stage = models.CharField(max_length=20, choices=STAGE_CHOICES)
    index = models.PositiveIntegerField()
    epochs = models.PositiveIntegerField()
    final_loss = models.FloatField(null=True, blank=True)
    path = models.CharField(max_length=500)
    created_at = models.DateTimeField(auto_now_add=True)

    class Meta:
        ordering = ['run', 'index']
        unique_together = ('run', 'stage')

    def __str__(self):
        return f"{self.run.name} #{self.index} {self.stage}"


class BenchReport(models.Model):
    checkpoint = models.CharField(max_length=500)
    corpus = models.CharField(max_length=500)
    methods = models.JSONField(default=list)
    tau_grid = models.JSONField(default=list)
    output_dir = models.CharField(max_length=500)
    created_at = models.DateTimeField(auto_now_add=True)

    class Meta:
        ordering = ['-created_at']

    def __str__(self):
        return f"bench of {self.checkpoint} on {self.corpus}"


class BenchRow(models.Model):
    report = models.ForeignKey(BenchReport, related_name='rows', on_delete=models.CASCADE)
    method = models.CharField(max_length=20)
    tau = models.FloatField(null=True, blank=True)
    bucket = models.CharField(max_length=20)
    count = models.PositiveIntegerField()
    mean_gflops = models.FloatField(null=True, blank=True)
    speedup = models.FloatField(null=True, blank=True)
    accuracy = models.FloatField(null=True, blank=True)
    mean_exit_layer = models.FloatField(null=True, blank=True)
    note = models.CharField(max_length=100, blank=True)

    class Meta:
        ordering = ['report', 'id']

    def __str__(self):
        return f"{self.method} tau={self.tau} {self.bucket}"
