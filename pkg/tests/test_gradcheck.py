"""Finite-difference harness: clean pass, fault injection, reproducibility."""

import numpy as np
import pytest

import fedgrow.model as model_mod
from fedgrow.gradcheck import run_gradcheck
from fedgrow.tensor import _node


@pytest.fixture(scope="module")
def clean_report():
    return run_gradcheck(seed=0)


class TestGradcheck:
    def test_fresh_model_passes(self, clean_report):
        assert clean_report.passed, (
            f"worst {clean_report.worst_param}: {clean_report.max_rel_err:.3e}"
        )

    def test_covers_every_parameter(self, clean_report):
        names = set(clean_report.per_param)
        assert any(n.startswith("enc.1.") for n in names)
        assert any(n.startswith("dec.1.") for n in names)
        assert "text_prenet.embed" in names
        assert "head.w" in names

    def test_repeat_runs_identical(self, clean_report):
        again = run_gradcheck(seed=0)
        assert again.max_rel_err == clean_report.max_rel_err
        assert again.worst_param == clean_report.worst_param

    def test_corrupted_backward_rule_fails_and_names_tensor(self, monkeypatch):
        def broken_relu(x):
            data = np.maximum(x.data, 0.0)

            def grad_fn(og):
                return (og * (x.data > 0.0) * 0.9,)  # wrong by 10%

            return _node(data, (x,), grad_fn)

        monkeypatch.setattr(model_mod, "relu", broken_relu)
        report = run_gradcheck(seed=0)
        assert not report.passed
        assert report.worst_param  # failure names the worst tensor
        assert report.max_rel_err > 1e-2
