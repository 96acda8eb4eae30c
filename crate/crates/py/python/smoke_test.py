"""Smoke test for the bilateral_il extension module.

Build and install first:  pip install --no-build-isolation ./crates/py
"""

import math
import tempfile
from pathlib import Path

import bilateral_il as bil


def main():
    assert abs(bil.design_lpf_cutoff(0.4) - math.pi / 0.4) < 1e-12

    cfg = bil.Config("desk")
    assert cfg.epochs == 600
    cfg.epochs = 2
    round_trip = bil.Config.from_toml(cfg.to_toml())
    assert round_trip.epochs == 2

    trial, fidelity = bil.run_demonstration(cfg, 40.0, 7)
    assert len(trial) == 15000
    assert fidelity["tracking_rad"] < 0.01
    assert trial.score(cfg) >= 0.6
    fast = trial.resample(20.0)
    assert len(fast) == 750

    data = bil.Dataset.collect(cfg)
    assert len(data) == 45
    assert data.energy_below(9, bil.design_lpf_cutoff(0.4)) >= 0.9

    model = bil.train("plt", data, cfg)
    with tempfile.TemporaryDirectory() as d:
        path = Path(d) / "plt.bin"
        model.save(path)
        again = bil.Model.load(path)
        assert again.to_bytes() == model.to_bytes()
        fast.save(Path(d) / "t.csv")
        assert len(bil.Trial.load(Path(d) / "t.csv")) == 750

    p = bil.Predictor(model)
    y = p.step(fast.channel("s_th1")[:1] * 9)
    assert len(y) == 9 and p.tick == 1

    run = bil.run_autonomous(model, cfg, 40.0, duration_s=1.0)
    assert run["network_ticks"] == 50
    assert 0.0 <= run["score"] <= 1.0

    step = bil.height_step_test(model, cfg, 40.0, 40.0)
    assert step["theta2_change"] == 0.0

    print(f"bilateral_il {bil.__version__}: smoke test passed ({model.kind}, {model.num_params} parameters)")


if __name__ == "__main__":
    main()
