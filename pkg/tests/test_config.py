"""Tests for settings and their use as solver defaults."""

from config import Settings
from models import SolverConfig


def test_environment_overrides_defaults(monkeypatch):
    monkeypatch.setenv("NMF_MAX_ITERS", "25")
    monkeypatch.setenv("NMF_RESTART_WORKERS", "3")
    settings = Settings()
    assert settings.default_max_iters == 25
    assert settings.restart_workers == 3


def test_solver_config_falls_back_to_settings():
    settings = Settings(default_max_iters=77, default_rel_tol=1e-6)
    cfg = SolverConfig.from_settings(2, settings, max_iters=None, seed=8)
    assert cfg.max_iters == 77
    assert cfg.rel_tol == 1e-6
    assert cfg.seed == 8
    assert SolverConfig.from_settings(2, settings, max_iters=5).max_iters == 5
