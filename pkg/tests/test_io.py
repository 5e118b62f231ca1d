import numpy as np
import pytest

from frfid import io
from frfid.classical import FrfEstimate
from frfid.graybox import FitResult, StartRecord
from frfid.plant import ThetaVector
from frfid.sigproc import TimeRecord


def test_time_record_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    rec = TimeRecord(u=rng.standard_normal((2, 40)), y=rng.standard_normal((2, 40)), r=rng.standard_normal((2, 40)),
                     sample_rate=100.0, period_samples=20, n_periods=1, settle_periods=1, meta={"seed": 3})
    p = tmp_path / "exp.csv"
    io.write_time_record(p, rec, np.array([1, 3, 5]))
    back, bins = io.read_time_record(p)
    assert back.u.tobytes() == rec.u.tobytes() and back.y.tobytes() == rec.y.tobytes()
    assert back.r.tobytes() == rec.r.tobytes()
    np.testing.assert_array_equal(bins, [1, 3, 5])
    assert back.meta == {"seed": 3} and back.settle_periods == 1
    assert p.read_text().splitlines()[0] == "t,u1,u2,y1,y2,r1,r2"


def test_time_record_bad_header(tmp_path):
    p = tmp_path / "x.csv"
    p.write_text("a,b\n1,2\n")
    io.dump_json(tmp_path / "x.json", {"sample_rate": 1, "period_samples": 1, "n_periods": 1})
    with pytest.raises(ValueError):
        io.read_time_record(p)


def test_frf_round_trip(tmp_path):
    rng = np.random.default_rng(1)
    G = rng.standard_normal((4, 2, 3)) + 1j * rng.standard_normal((4, 2, 3))
    cov = rng.standard_normal((4, 6, 6)) + 0j
    est = FrfEstimate(2 * np.pi * np.array([1.0, 2.0, 3.5, 7.0]), G, "LOG(M=2)", 6,
                      valid=[True, False, True, True], cov=cov, notes=["x"])
    io.write_frf(tmp_path / "e.json", est)
    back = io.read_frf(tmp_path / "e.json")
    np.testing.assert_array_equal(back.G, est.G)
    np.testing.assert_array_equal(back.valid, est.valid)
    np.testing.assert_array_equal(back.cov, est.cov)
    np.testing.assert_allclose(back.freqs, est.freqs, rtol=1e-15)
    assert back.method_tag == "LOG(M=2)" and back.n_e_used == 6 and back.notes == ["x"]


def test_fit_round_trip(tmp_path):
    th = ThetaVector(k_g=[10.0, 20.0], d_g=[0.1, 0.2], k_e=[5.0], d_e=[0.5])
    s = StartRecord(np.ones(6), np.full(6, 2.0), 3.0, 1.0, 7, True, "ok", [3.0, 2.0, 1.0])
    fit = FitResult(th, th.names(), 1.0, [s], wall_time=12.3)
    io.write_fit(tmp_path / "f.json", fit, th, {"cell": "LOG_ne3"})
    d = io.load_json(tmp_path / "f.json")
    assert "wall_time" not in d and d["cell"] == "LOG_ne3"
    assert d["theta_hat"]["k_g1"] == {"value": 10.0, "unit": "N*m/rad"}
    back = io.read_fit(tmp_path / "f.json")
    np.testing.assert_array_equal(back.theta_hat.to_vector(), th.to_vector())
    assert back.starts[0].trace == [3.0, 2.0, 1.0]


def test_atomic_write_leaves_no_temp_files(tmp_path):
    io.atomic_write_text(tmp_path / "sub" / "a.txt", "hello")
    assert [p.name for p in (tmp_path / "sub").iterdir()] == ["a.txt"]
