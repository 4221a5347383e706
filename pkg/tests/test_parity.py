import numpy as np
import pytest
from scipy import stats

from quanta.parity import (
    ParityError,
    SampleBatch,
    TaskSpec,
    batch_labels,
    build_task_spec,
    draw_batch,
    fixed_eval_set,
    parity_label,
)
from quanta.theory import QuantaDistribution, zipf_pmf


@pytest.fixture(scope="module")
def spec():
    return build_task_spec(100, 50, 3, 0.4, seed=0)


class TestTaskSpec:
    def test_paper_config(self):
        s = build_task_spec(500, 100, 3, 0.4, seed=0)
        assert len(s.subsets) == 500
        for subset in s.subsets:
            assert len(subset) == 3
            assert len(set(subset)) == 3
            assert all(1 <= i <= 100 for i in subset)

    def test_deterministic(self):
        a = build_task_spec(500, 100, 3, 0.4, seed=7)
        b = build_task_spec(500, 100, 3, 0.4, seed=7)
        assert a == b
        assert a.subsets != build_task_spec(500, 100, 3, 0.4, seed=8).subsets

    def test_forced(self):
        assert build_task_spec(1, 1, 1, 0.4, seed=3).subsets == ((1,),)

    def test_bad_arity(self):
        with pytest.raises(ParityError):
            build_task_spec(10, 3, 4, 0.4, seed=0)

    def test_frequencies(self, spec):
        d = QuantaDistribution(0.4, 100)
        np.testing.assert_allclose(spec.frequencies()[[0, 9, 99]], [zipf_pmf(k, d) for k in (1, 10, 100)], rtol=1e-12)


class TestParityLabel:
    def test_paper_example(self):
        bits = np.zeros(10, dtype=np.uint8)
        bits[[1, 6]] = 1  # bit 2 and bit 7 (1-based)
        assert parity_label(bits, {2, 7}) == 0

    def test_odd(self):
        bits = np.zeros(10, dtype=np.uint8)
        bits[1] = 1
        assert parity_label(bits, {2, 7}) == 1

    def test_zero_bits(self):
        assert parity_label(np.zeros(20, dtype=np.uint8), (3, 9, 20)) == 0

    def test_out_of_range(self):
        with pytest.raises(IndexError):
            parity_label(np.zeros(5, dtype=np.uint8), (2, 6))
        with pytest.raises(IndexError):
            parity_label(np.zeros(5, dtype=np.uint8), (0, 2))


class TestDrawBatch:
    def test_single_row(self, spec):
        b = draw_batch(spec, 1, 123)
        assert b.inputs.shape == (1, 150)
        assert b.inputs[0, :100].sum() == 1

    def test_rows_one_hot_and_labels(self, spec):
        b = draw_batch(spec, 2000, 5)
        x = b.inputs
        np.testing.assert_array_equal(x[:, :100].sum(axis=1), 1)
        np.testing.assert_array_equal(x[:, :100].argmax(axis=1) + 1, b.subtask_ids)
        for row in range(0, 2000, 97):
            subset = spec.subsets[b.subtask_ids[row] - 1]
            assert b.labels[row] == parity_label(x[row, 100:], subset)

    def test_seeded(self, spec):
        a, b = draw_batch(spec, 50, 9), draw_batch(spec, 50, 9)
        np.testing.assert_array_equal(a.inputs, b.inputs)
        np.testing.assert_array_equal(a.labels, b.labels)

    def test_arity_one(self):
        s = TaskSpec(2, 8, 1, 0.4, 0, ((5,), (1,)))
        b = draw_batch(s, 500, 1)
        hit = b.subtask_ids == 1
        np.testing.assert_array_equal(b.labels[hit], b.task_bits[hit, 4])

    def test_first_subtask_frequency(self):
        s = build_task_spec(500, 100, 3, 0.4, seed=0)
        b = draw_batch(s, 10**6, 2)
        freq = np.mean(b.subtask_ids == 1)
        p1 = zipf_pmf(1, QuantaDistribution(0.4, 500))
        # binomial sd is ~4.6e-4, so the 0.005 band is > 10 sd wide
        assert abs(freq - p1) < 0.005

    def test_chi_square(self, spec):
        b = draw_batch(spec, 10**6, 11)
        counts = np.bincount(b.subtask_ids - 1, minlength=100)
        expected = spec.frequencies() * 10**6
        assert stats.chisquare(counts, expected).pvalue > 0.001

    def test_label_balance(self, spec):
        m = 20000
        b = draw_batch(spec, m, 4)
        sd = np.sqrt(0.25 / m)
        assert abs(b.labels.mean() - 0.5) < 3 * sd

    def test_bad_size(self, spec):
        with pytest.raises(ParityError):
            draw_batch(spec, 0, 1)


class TestEvalSet:
    def test_structure(self):
        s = build_task_spec(3, 10, 2, 0.4, seed=1)
        b = fixed_eval_set(s, 1, 0)
        assert sorted(b.subtask_ids.tolist()) == [1, 2, 3]

    def test_stratified(self, spec):
        b = fixed_eval_set(spec, 100, 0)
        np.testing.assert_array_equal(np.bincount(b.subtask_ids, minlength=101)[1:], 100)

    def test_labels_against_scalar_oracle(self, spec):
        b = fixed_eval_set(spec, 5, 3)
        oracle = [parity_label(b.task_bits[i], spec.subsets[b.subtask_ids[i] - 1]) for i in range(len(b))]
        np.testing.assert_array_equal(b.labels, oracle)


def test_dense_roundtrip(spec):
    b = draw_batch(spec, 64, 0)
    back = SampleBatch.from_inputs(b.inputs, b.labels, spec.n_tasks)
    np.testing.assert_array_equal(back.subtask_ids, b.subtask_ids)
    np.testing.assert_array_equal(back.task_bits, b.task_bits)
    np.testing.assert_array_equal(batch_labels(spec, back.subtask_ids, back.task_bits), b.labels)
