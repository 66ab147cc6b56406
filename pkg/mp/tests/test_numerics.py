import math

import torch
from django.test import SimpleTestCase

from mp import numerics as nx
from mp.exceptions import InputError, NumericError, ShapeError


class KernelTests(SimpleTestCase):
    def setUp(self):
        self.generator = torch.Generator().manual_seed(7)

    def randn(self, *shape, requires_grad=False):
        return torch.randn(*shape, generator=self.generator, dtype=nx.DTYPE).requires_grad_(requires_grad)

    def test_matmul_rejects_mismatched_inner_dimension(self):
        with self.assertRaises(ShapeError):
            nx.matmul(self.randn(2, 3), self.randn(4, 2))

    def test_add_rejects_shapes_that_do_not_broadcast(self):
        with self.assertRaises(ShapeError):
            nx.add(self.randn(2, 3), self.randn(2, 4))

    def test_softmax_rows_are_stochastic(self):
        probs = nx.softmax_rows(self.randn(5, 7) * 30)
        self.assertTrue(torch.allclose(probs.sum(dim=1), torch.ones(5, dtype=nx.DTYPE), atol=1e-12))
        self.assertTrue(bool((probs >= 0).all()))

    def test_matrix_rejects_non_finite_values(self):
        with self.assertRaises(NumericError):
            nx.matrix([1.0, float('nan')])

    def test_matrix_promotes_vectors_to_rows(self):
        self.assertEqual(tuple(nx.matrix([1, 2, 3]).shape), (1, 3))

    def test_log_floor_clamps_zero(self):
        out = nx.log(nx.matrix([0.0, 1.0]), floor=1e-12)
        self.assertAlmostEqual(float(out[0, 0]), math.log(1e-12))
        self.assertEqual(float(out[0, 1]), 0.0)

    def test_layer_norm_with_unit_gain_normalises_rows(self):
        width = 6
        out = nx.layer_norm(self.randn(3, width) * 4 + 2, torch.ones(width, dtype=nx.DTYPE),
                            torch.zeros(width, dtype=nx.DTYPE))
        self.assertTrue(torch.allclose(out.mean(dim=1), torch.zeros(3, dtype=nx.DTYPE), atol=1e-12))

    def test_matmul_matches_triple_loop(self):
        for _ in range(8):
            rows, inner, cols = (int(d) for d in torch.randint(1, 17, (3,), generator=self.generator))
            a, b = self.randn(rows, inner), self.randn(inner, cols)
            expected = torch.zeros(rows, cols, dtype=nx.DTYPE)
            for i in range(rows):
                for j in range(cols):
                    expected[i, j] = sum(float(a[i, k]) * float(b[k, j]) for k in range(inner))
            self.assertTrue(torch.allclose(nx.matmul(a, b), expected, rtol=0, atol=1e-12), (rows, inner, cols))

    def test_softmax_exact_values(self):
        total = math.exp(1) + math.exp(2) + math.exp(3)
        probs = nx.softmax_rows(nx.matrix([1.0, 2.0, 3.0]))
        for got, k in zip(probs[0].tolist(), (1, 2, 3)):
            self.assertAlmostEqual(got, math.exp(k) / total, places=15)

    def test_softmax_ignores_row_shifts(self):
        m = self.randn(4, 6)
        shifted = m + torch.tensor([[100.0], [-50.0], [0.5], [700.0]], dtype=nx.DTYPE)
        self.assertTrue(torch.allclose(nx.softmax_rows(m), nx.softmax_rows(shifted), atol=1e-12))

    def test_layer_norm_of_two_values(self):
        ones, zeros = torch.ones(2, dtype=nx.DTYPE), torch.zeros(2, dtype=nx.DTYPE)
        out = nx.layer_norm(nx.matrix([1.0, 3.0]), ones, zeros)
        self.assertAlmostEqual(float(out[0, 0]), -1.0, delta=1e-5)
        self.assertAlmostEqual(float(out[0, 1]), 1.0, delta=1e-5)

    def test_layer_norm_with_zero_gain_returns_the_bias(self):
        bias = nx.matrix([0.5, -1.0, 2.0])
        out = nx.layer_norm(self.randn(3, 3), torch.zeros(3, dtype=nx.DTYPE), bias)
        self.assertTrue(torch.equal(out, bias.expand(3, 3)))

    def test_layer_norm_of_a_constant_row_is_zero(self):
        out = nx.layer_norm(nx.matrix([[4.0, 4.0, 4.0, 4.0]]), torch.ones(4, dtype=nx.DTYPE),
                            torch.zeros(4, dtype=nx.DTYPE))
        self.assertTrue(torch.allclose(out, torch.zeros(1, 4, dtype=nx.DTYPE), atol=1e-12))

    def test_columns_rejects_empty_range(self):
        with self.assertRaises(ShapeError):
            nx.columns(self.randn(2, 4), 3, 3)


class CounterTests(SimpleTestCase):
    def test_matmul_charges_one_mac_per_multiply_accumulate(self):
        a, b = torch.ones(3, 4, dtype=nx.DTYPE), torch.ones(4, 5, dtype=nx.DTYPE)
        with nx.counting() as counter:
            nx.matmul(a, b)
        self.assertEqual(counter.total, nx.OpCount(macs=60, aux=0))
        self.assertEqual(counter.total.flops, 120)

    def test_component_labels_route_charges(self):
        m = torch.ones(2, 3, dtype=nx.DTYPE)
        with nx.counting() as counter:
            with nx.component('ffn'):
                nx.gelu(m)
            nx.add(m, m)
        self.assertEqual(counter['ffn'], nx.OpCount(0, 6))
        self.assertEqual(counter['other'], nx.OpCount(0, 6))
        self.assertEqual(counter['attention'], nx.OpCount())

    def test_nested_counters_both_receive_charges(self):
        m = torch.ones(2, 2, dtype=nx.DTYPE)
        with nx.counting() as outer:
            with nx.counting() as inner:
                nx.matmul(m, m)
            nx.matmul(m, m)
        self.assertEqual(inner.total.macs, 8)
        self.assertEqual(outer.total.macs, 16)

    def test_nothing_is_charged_without_a_counter(self):
        nx.matmul(torch.ones(2, 2, dtype=nx.DTYPE), torch.ones(2, 2, dtype=nx.DTYPE))
        with nx.counting() as counter:
            pass
        self.assertEqual(counter.total, nx.OpCount())


class TapeTests(SimpleTestCase):
    def test_gradient_matches_closed_form(self):
        w = nx.matrix([[1.0, 2.0], [3.0, 4.0]], requires_grad=True)
        x = nx.matrix([[1.0, -1.0]])
        with nx.GradTape() as tape:
            loss = nx.sum_all(nx.matmul(x, w))
        (grad,) = tape.gradient(loss, [w])
        self.assertTrue(torch.equal(grad, torch.tensor([[1.0, 1.0], [-1.0, -1.0]], dtype=nx.DTYPE)))
        self.assertEqual(tape.ops, ['matmul', 'sum_all'])

    def test_unused_and_frozen_parameters_get_zero_gradients(self):
        used = nx.matrix([[2.0]], requires_grad=True)
        unused = nx.matrix([[5.0, 6.0]], requires_grad=True)
        frozen = nx.matrix([[1.0]])
        with nx.GradTape() as tape:
            loss = nx.sum_all(nx.mul(used, used))
        grads = tape.gradient(loss, [used, unused, frozen])
        self.assertEqual(float(grads[0]), 4.0)
        self.assertTrue(torch.equal(grads[1], torch.zeros(1, 2, dtype=nx.DTYPE)))
        self.assertTrue(torch.equal(grads[2], torch.zeros(1, 1, dtype=nx.DTYPE)))

    def test_non_scalar_loss_is_rejected(self):
        w = nx.matrix([[1.0, 2.0]], requires_grad=True)
        with nx.GradTape() as tape:
            out = nx.scale(w, 2.0)
        with self.assertRaises(ShapeError):
            tape.gradient(out, [w])

    def test_trace_records_backward_visits_in_reverse(self):
        w = nx.matrix([[0.5, -0.5]], requires_grad=True)
        with nx.GradTape(trace=True) as tape:
            loss = nx.sum_all(nx.tanh(nx.scale(w, 3.0)))
        tape.gradient(loss, [w])
        inner = [op for op in tape.visited if op != 'sum_all']
        self.assertEqual(inner, ['tanh', 'scale'])


class GradCheckTests(SimpleTestCase):
    def test_step_outside_range_is_rejected(self):
        params = {'w': nx.matrix([[1.0]], requires_grad=True)}
        for h in (1e-7, 1e-2):
            with self.assertRaises(InputError):
                nx.grad_check(lambda p: nx.sum_all(p['w']), params, h)

    def test_squared_norm_matches_its_closed_form(self):
        w = nx.matrix([[1.5, -2.0, 0.75], [-0.5, 3.0, 1.25]], requires_grad=True)
        with nx.GradTape() as tape:
            loss = nx.sum_all(nx.mul(w, w))
        (grad,) = tape.gradient(loss, [w])
        self.assertTrue(torch.equal(grad, 2 * w.detach()))
        self.assertLess(nx.grad_check(lambda p: nx.sum_all(nx.mul(p['w'], p['w'])), {'w': w}, 1e-4), 1e-8)

    def test_smooth_function_agrees_with_central_differences(self):
        generator = torch.Generator().manual_seed(1)
        params = {
            'w': torch.randn(3, 4, generator=generator, dtype=nx.DTYPE).requires_grad_(True),
            'b': torch.randn(1, 4, generator=generator, dtype=nx.DTYPE).requires_grad_(True),
        }
        x = torch.randn(2, 3, generator=generator, dtype=nx.DTYPE)

        def loss_fn(p):
            hidden = nx.gelu(nx.add(nx.matmul(x, p['w']), p['b']))
            return nx.sum_all(nx.log_softmax_rows(hidden))

        self.assertLessEqual(nx.grad_check(loss_fn, params, 1e-5), 1e-4)

    def test_parameters_are_restored_exactly(self):
        w = nx.matrix([[0.1, 0.2, 0.3]], requires_grad=True)
        before = w.detach().clone()
        nx.grad_check(lambda p: nx.sum_all(nx.sigmoid(p['w'])), {'w': w}, 1e-4)
        self.assertTrue(torch.equal(w.detach(), before))
