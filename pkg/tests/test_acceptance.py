"""Acceptance criteria, one test per criterion.

Run with ``pytest -s tests/test_acceptance.py`` to see one PASS/FAIL
line per criterion.  Tolerances are fixed here, not calibrated at
runtime.
"""

import time

import numpy as np
import pytest

import grapemix.verify as verify
from grapemix import (
    MixtureStore,
    QuadraticTaskFamily,
    ReweightConfig,
    alignment,
    export_trajectory,
    normalized_grad,
    pcgrad_surgered,
    roi,
    stream_rng,
    train_run,
)
from grapemix.simplex import SIMPLEX_TOL


def report(num: int, name: str, passed: bool, detail: str):
    line = f"[criterion {num:2d}] {'PASS' if passed else 'FAIL'} {name}: {detail}"
    print(line)
    assert passed, line


@pytest.fixture(scope="module")
def grape_5000_step_run():
    return verify.theorem1_run()


class TestCriterion1UpdateOracle:
    def test_oracle_equivalence(self):
        results = verify.verify_updates()
        for r in results:
            report(1, r.name, r.passed, r.detail)


class TestCriterion2SimplexConservation:
    def test_all_recorded_weights_are_simplices(self, grape_5000_step_run):
        _, trajectory = grape_5000_step_run
        alphas, zs = trajectory.alphas, trajectory.zs
        worst_sum = max(
            np.abs(alphas.sum(axis=1) - 1.0).max(), np.abs(zs.sum(axis=1) - 1.0).max()
        )
        min_entry = min(alphas.min(), zs.min())
        passed = worst_sum <= SIMPLEX_TOL and min_entry >= 0.0
        report(
            2,
            "simplex conservation over 5000-step run",
            passed,
            f"{len(trajectory)} records, worst |sum-1| {worst_sum:.2e} (tol 1e-9), min entry {min_entry:.2e}",
        )


class TestCriterion3TaylorScaling:
    @staticmethod
    def _discrepancy(rate):
        family = QuadraticTaskFamily(curvatures=[[1.0]], centers=[[0.0]])
        model = family.model()
        batch = list(family.task_dataset(0))
        params = np.array([1.0])
        l_prev = model.loss(params, batch)
        grad = model.grad(params, batch)
        l_next = model.loss(params - rate * grad, batch)
        first_order = rate * alignment(normalized_grad(grad, l_prev), grad)
        return abs(roi(l_prev, l_next) - first_order)

    def test_first_order_gap_scales_quadratically(self):
        gap = self._discrepancy(0.01)
        ok_point = abs(gap - 1.0e-4) <= 1e-6
        report(3, "discrepancy at rate 0.01", ok_point, f"|measured - first order| = {gap:.6e} (want 1.0e-4 +- 1e-6)")
        rates = np.array([1e-2, 3e-3, 1e-3, 3e-4, 1e-4])
        gaps = np.array([self._discrepancy(r) for r in rates])
        slope = np.polyfit(np.log(rates), np.log(gaps), 1)[0]
        report(3, "log-log slope of discrepancy vs rate", 1.8 <= slope <= 2.2, f"slope {slope:.4f} (want in [1.8, 2.2])")


class TestCriterion4Convergence:
    def test_theorem1_harness(self):
        for r in verify.verify_theorem1():
            report(4, r.name, r.passed, r.detail)


class TestCriterion5VarianceReduction:
    def test_theorem2_harness(self):
        for r in verify.verify_theorem2():
            report(5, r.name, r.passed, r.detail)


class TestCriterion6DroPrioritization:
    def test_starved_task_gains_weight_at_every_update(self):
        # both domains emit task 1's gradient, so task 2 is starved and
        # must gain priority at each of the first 10 task updates
        family = QuadraticTaskFamily(
            curvatures=[[1.0, 1.0], [1.0, 1.0]], centers=[[1.0, 0.0], [0.0, 1.0]]
        )
        store = MixtureStore(
            {
                "d0": family.domain_dataset(np.array([1.0, 0.0])),
                "d1": family.domain_dataset(np.array([1.0, 0.0])),
            },
            {"t0": family.task_dataset(0), "t1": family.task_dataset(1)},
        )
        cfg = ReweightConfig(
            algorithm="grape",
            total_steps=100,
            base_lr=0.2,
            update_every_z=10,
            update_every_alpha=10,
            step_ratio_z=0.5,
            step_ratio_alpha=1.5,
            task_mix_mode="expected",
            domain_mix_mode="expected",
            eval_every=10,
        )
        _, trajectory = train_run(cfg, family.model(), store, seed=0)
        z2 = [r.z[1] for r in trajectory.records]
        diffs = np.diff(z2)
        passed = bool(np.all(diffs > 0.0)) and len(diffs) == 10
        report(
            6,
            "starved task strictly gains weight",
            passed,
            f"z_2 over 10 updates: {z2[0]:.3f} -> {z2[-1]:.3f}, min increment {diffs.min():.2e}",
        )


class TestCriterion7Pcgrad:
    def test_conflicting_pairs_surgery(self):
        rng = np.random.default_rng(1234)
        worst = np.inf
        for _ in range(200):
            dim = int(rng.integers(2, 12))
            g1 = rng.normal(size=dim)
            g2 = rng.normal(size=dim)
            if np.dot(g1, g2) >= 0:
                g2 = g2 - 2.0 * (np.dot(g1, g2) / np.dot(g1, g1)) * g1
            assert np.dot(g1, g2) < 0
            s1, s2 = pcgrad_surgered([g1, g2], stream_rng(0, "pcgrad"))
            worst = min(worst, np.dot(s1, g2), np.dot(s2, g1))
        report(7, "conflicting pairs nonconflicting after surgery", worst >= -1e-12,
               f"200 pairs, min dot(surgered, other original) = {worst:.2e} (tol -1e-12)")

    def test_nonconflicting_pass_through(self):
        rng = np.random.default_rng(99)
        unchanged = True
        for _ in range(50):
            g1 = rng.normal(size=5)
            g2 = rng.normal(size=5)
            if np.dot(g1, g2) < 0:
                g2 = -g2
            s1, s2 = pcgrad_surgered([g1, g2], stream_rng(0, "pcgrad"))
            unchanged &= np.array_equal(s1, g1) and np.array_equal(s2, g2)
        report(7, "non-conflicting gradients pass through", unchanged, "50 pairs unchanged")


class TestCriterion8Overhead:
    def test_counter_identities(self):
        for r in verify.verify_overhead():
            report(8, r.name, r.passed, r.detail)


class TestCriterion9MultilingualAnalog:
    def test_group_robust_beats_baselines(self):
        start = time.perf_counter()
        avg_wins = 0
        worst_wins = 0
        per_seed = []
        for seed in range(10):
            store = verify.multilingual_store(seed)
            nll_uniform = verify.multilingual_run("uniform", seed, store)
            nll_doge = verify.multilingual_run("doge", seed, store)
            nll_grape = verify.multilingual_run("grape", seed, store)
            avg_wins += nll_grape.mean() <= nll_uniform.mean()
            worst_wins += nll_grape.max() <= nll_doge.max()
            per_seed.append(
                f"seed {seed}: avg {nll_grape.mean():.4f} vs uniform {nll_uniform.mean():.4f}; "
                f"worst {nll_grape.max():.4f} vs doge {nll_doge.max():.4f}"
            )
        elapsed = time.perf_counter() - start
        for line in per_seed:
            print("    " + line)
        report(9, "average NLL beats uniform", avg_wins >= 9, f"{avg_wins}/10 seeds (need >= 9)")
        report(9, "worst-task NLL beats uniform task weighting", worst_wins >= 7, f"{worst_wins}/10 seeds (need >= 7)")
        report(9, "runtime budget", elapsed < 300.0, f"{elapsed:.0f} s for 30 runs (budget 300 s)")


class TestCriterion10GradientContract:
    def test_finite_difference_oracle(self):
        for r in verify.verify_gradients():
            report(10, r.name, r.passed, r.detail)


class TestCriterion11Determinism:
    def test_identical_seed_gives_byte_identical_exports(self, tmp_path):
        from grapemix import CharLMModel

        paths = []
        for attempt in range(2):
            store = verify.multilingual_store(seed=5)
            model = CharLMModel(verify.MULTILINGUAL_VOCAB)
            cfg = ReweightConfig(
                algorithm="grape",
                total_steps=600,
                base_lr=0.15,
                train_batch_size=16,
                eval_batch_size=32,
                update_every_alpha=100,
                update_every_z=100,
                eval_every=50,
            )
            _, trajectory = train_run(cfg, model, store, seed=5)
            path = tmp_path / f"run{attempt}.csv"
            export_trajectory(trajectory, path)
            paths.append(path)
        identical = paths[0].read_bytes() == paths[1].read_bytes()
        report(11, "byte-identical trajectory exports", identical,
               f"two grape runs, {paths[0].stat().st_size} bytes each")
