"""Quick check of the compiled `spinboson` extension.

Build and install it first, e.g. `maturin develop -m crates/python/Cargo.toml
--features extension-module`, or copy the cdylib next to this script as
`spinboson.so`.
"""

import math
import sys
import tempfile
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent))

import spinboson as sb


def check(cond, msg):
    if not cond:
        raise SystemExit(f"FAIL: {msg}")
    print(f"ok   {msg}")


def main():
    check(sb.count_parameters("cgru") == 515806, "cgru parameter count")
    check(sb.count_parameters("ffnn") == 520045, "ffnn parameter count")
    check(len(sb.ARCHITECTURES) == 14, "14 architectures")

    # no bath: coherent oscillation cos(t)
    t, v = sb.heom_propagate(0.0, 0.0, 1.0, 1.0)
    check(len(t) == 201, "201 saved points")
    check(max(abs(x - math.cos(s)) for s, x in zip(t, v)) < 1e-3, "lambda = 0 gives cos(t)")

    t, v = sb.heom_propagate(0.0, 0.2, 5.0, 1.0, refine=False)
    windows = [v[i : i + 41] for i in range(len(v) - 41)]
    labels = [v[i + 41] for i in range(len(v) - 41)]
    krr = sb.KrrModel.fit(windows, labels, kernel="gaussian", sigma=2.0, lambda_reg=1e-10)
    check(krr.parameter_count == len(windows), "one coefficient per training window")
    check(abs(krr.predict(windows[5]) - labels[5]) < 1e-4, "KRR reproduces a training label")

    pred = sb.recursive_forecast(krr, v[:41], 160)
    err = sb.mae(pred, v[41:])
    check(len(pred) == 160 and err < 1e-2, f"recursive KRR forecast on its training trajectory (MAE {err:.2e})")

    net = sb.NetModel.build("ffnn", seed=1)
    hist = net.train(windows, labels, epochs=2, batch_size=32, seed=0)
    check(len(hist) == 2 and all(math.isfinite(h["train_mse"]) for h in hist), "ffnn trains for two epochs")
    out = sb.recursive_forecast(net, v[:41], 10)
    check(all(math.isfinite(x) for x in out), "ffnn forecast is finite")

    with tempfile.TemporaryDirectory() as d:
        p = str(Path(d) / "m.krr")
        krr.save(p)
        back = sb.KrrModel.load(p)
        check(back.predict(windows[3]) == krr.predict(windows[3]), "KRR save/load round trip")
        try:
            sb.NetModel.load(str(Path(d) / "missing.net"))
            check(False, "missing model raises")
        except FileNotFoundError:
            check(True, "missing model raises FileNotFoundError")

    print("all smoke checks passed")


if __name__ == "__main__":
    main()
