import math

import torch
from django.test import SimpleTestCase

from mp import numerics as nx
from mp.encoder import Encoder, ModelConfig
from mp.exceptions import InputError, ShapeError
from mp.exiting import (SubClassifier, exit_layer_for, kd_loss, should_exit, stage2_loss, sub_forward,
                        uncertainty)
from mp.pipeline import LabeledExample, subclassifier_loss
from mp.pruning import PruneMode, PruningState, pruned_forward

from .factories import GRAD_CHECK_CONFIG, random_ids, tiny_model


class UncertaintyTests(SimpleTestCase):
    def test_one_hot_is_certain(self):
        self.assertEqual(uncertainty(nx.matrix([[0.0, 1.0, 0.0]]), 3), 0.0)

    def test_uniform_is_maximally_uncertain(self):
        self.assertAlmostEqual(uncertainty(nx.matrix([[0.25] * 4]), 4), 1.0, places=12)

    def test_values_stay_in_unit_interval(self):
        generator = torch.Generator().manual_seed(5)
        for _ in range(20):
            p = torch.softmax(torch.randn(1, 5, generator=generator, dtype=nx.DTYPE) * 3, dim=-1)
            self.assertTrue(0.0 <= uncertainty(p, 5) <= 1.0)

    def test_two_class_value(self):
        u = uncertainty(nx.matrix([[0.9, 0.1]]), 2)
        self.assertAlmostEqual(u, 0.4690, delta=1e-4)
        self.assertAlmostEqual(u, -(0.9 * math.log(0.9) + 0.1 * math.log(0.1)) / math.log(2), places=12)

    def test_class_count_must_match(self):
        with self.assertRaises(ShapeError):
            uncertainty(nx.matrix([[0.5, 0.5]]), 3)

    def test_halt_value_boundary_exits(self):
        self.assertTrue(should_exit(0.4, 0.4))
        self.assertFalse(should_exit(0.4000001, 0.4))
        self.assertTrue(should_exit(0.0, 0.0))

    def test_exit_layer_moves_down_as_halt_value_grows(self):
        us = [0.9, 0.6, 0.3, 0.7]
        layers = [exit_layer_for(us, tau, 5) for tau in (0.0, 0.2, 0.3, 0.6, 0.9, 1.0)]
        self.assertEqual(layers, [5, 5, 3, 2, 1, 1])
        self.assertEqual(layers, sorted(layers, reverse=True))


class DistillationTests(SimpleTestCase):
    def test_divergence_is_non_negative_and_zero_on_equal_inputs(self):
        generator = torch.Generator().manual_seed(2)
        for _ in range(10):
            p = torch.softmax(torch.randn(1, 4, generator=generator, dtype=nx.DTYPE), dim=-1)
            q = torch.softmax(torch.randn(1, 4, generator=generator, dtype=nx.DTYPE), dim=-1)
            self.assertGreaterEqual(float(kd_loss(p, q)), 0.0)
            self.assertAlmostEqual(float(kd_loss(p, p)), 0.0, places=14)

    def test_divergence_puts_the_head_distribution_first(self):
        value = float(kd_loss(nx.matrix([[0.5, 0.5]]), nx.matrix([[0.9, 0.1]])))
        self.assertAlmostEqual(value, 0.5108, delta=1e-4)
        self.assertAlmostEqual(value, 0.5 * math.log(0.5 / 0.9) + 0.5 * math.log(0.5 / 0.1), places=12)
        self.assertAlmostEqual(float(kd_loss(nx.matrix([[0.9, 0.1]]), nx.matrix([[0.5, 0.5]]))), 0.3681, delta=1e-4)

    def test_student_zeros_contribute_nothing(self):
        p_s = nx.matrix([[0.0, 1.0]])
        p_t = nx.matrix([[0.5, 0.5]])
        self.assertAlmostEqual(float(kd_loss(p_s, p_t)), math.log(2.0), places=12)

    def test_shapes_must_agree(self):
        with self.assertRaises(ShapeError):
            kd_loss(nx.matrix([[0.5, 0.5]]), nx.matrix([[0.2, 0.3, 0.5]]))

    def test_stage_loss_is_the_sum_of_divergences(self):
        p_t = nx.matrix([[0.7, 0.2, 0.1]])
        subs = [nx.matrix([[0.3, 0.3, 0.4]]), nx.matrix([[0.6, 0.3, 0.1]]), nx.matrix([[0.1, 0.1, 0.8]])]
        expected = sum(float(kd_loss(p, p_t)) for p in subs)
        self.assertAlmostEqual(float(stage2_loss(subs, p_t)), expected, delta=1e-12)

    def test_stage_loss_needs_a_sub_classifier(self):
        with self.assertRaises(InputError):
            stage2_loss([], nx.matrix([[1.0]]))


class SubClassifierTests(SimpleTestCase):
    def setUp(self):
        self.model = tiny_model(seed=6)

    def test_output_is_a_distribution(self):
        h = self.model.block_forward(self.model.embed(random_ids(8, 16)), 1).hidden
        p = sub_forward(self.model, h, 1)
        self.assertEqual(tuple(p.shape), (1, 2))
        self.assertAlmostEqual(float(p.sum()), 1.0, places=12)

    def test_reads_only_its_own_layer(self):
        h = self.model.block_forward(self.model.embed([3, 4]), 1).hidden
        with self.assertRaises(InputError):
            sub_forward(self.model, h, 2)

    def test_no_head_above_the_last_layer(self):
        with self.assertRaises(InputError):
            SubClassifier(self.model, 3)
        with self.assertRaises(InputError):
            SubClassifier(self.model, 0)

    def test_head_reads_block_output_before_its_own_drop(self):
        with torch.no_grad():
            self.model.params['pruning.deltas'].fill_(10.0)
        ids = random_ids(9, 16, seed=4)
        pruned = pruned_forward(self.model, ids, PruningState.for_model(self.model, PruneMode.HARD))
        self.assertEqual([h.n for h in pruned.states], [10, 1, 1])
        full = self.model.block_forward(self.model.embed(ids), 1).hidden
        self.assertTrue(torch.equal(sub_forward(self.model, pruned.states[0], 1), sub_forward(self.model, full, 1)))

    def test_costs_are_charged_to_the_subclassifier(self):
        h = self.model.block_forward(self.model.embed([3, 4, 5]), 1).hidden
        with nx.counting() as counter:
            sub_forward(self.model, h, 1)
        self.assertEqual(counter.total, counter['subclassifier'])
        self.assertGreater(counter.total.macs, 0)


class DistillationGradientTests(SimpleTestCase):
    def test_backbone_gets_no_gradient(self):
        model = tiny_model(seed=4)
        example = LabeledExample(tuple(random_ids(7, 16, seed=1)), 1)
        names = list(model.params)
        with nx.GradTape() as tape:
            loss, _ = subclassifier_loss(model, example, mp_mode=False)
        grads = dict(zip(names, tape.gradient(loss, [model.params[name] for name in names])))
        for name in ('layer1.query.weight', 'layer3.ffn_out.bias', 'classifier.weight', 'embed.tokens',
                     'pruning.deltas'):
            self.assertTrue(torch.equal(grads[name], torch.zeros_like(grads[name])), name)
        self.assertGreater(float(grads['sub1.down.weight'].abs().sum()), 0.0)

    def test_distillation_gradients_match_central_differences(self):
        model = Encoder(ModelConfig(**GRAD_CHECK_CONFIG), seed=21)
        ids = [2, 5, 7, 3, 9]
        states = pruned_forward(model, ids, PruningState.for_model(model)).states
        p_t = model.pool_and_classify(states[-1]).detach()
        inputs = [s.replace_values(s.values.detach()) for s in states[:-1]]

        def loss_fn(params):
            return stage2_loss([sub_forward(model, h, layer) for layer, h in enumerate(inputs, start=1)], p_t)

        names = ['sub1.down.weight', 'sub1.query.weight', 'sub1.ffn_in.bias', 'sub2.attn_norm.gain',
                 'sub2.pooler.weight', 'sub2.projector.bias']
        self.assertLessEqual(nx.grad_check(loss_fn, model.params, 1e-5, names=names), 1e-4)
