"""Tensor container, run-config validation, and the CLI surface."""

import json
import time

import numpy as np
import pytest

from kgp.cli import main
from kgp.config import validate_config
from kgp.errors import ValidationError
from kgp.io import read_json, read_tensor, write_tensor


def write_config(path, doc):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh)
    return str(path)


class TestTensorFile:
    def test_round_trip_lossless(self, tmp_path):
        rng = np.random.default_rng(0)
        values = rng.standard_normal((3, 4, 5))
        path = tmp_path / "t.kgp"
        write_tensor(path, values, ["parameter", "spatial", "temporal"])
        back = read_tensor(path)
        np.testing.assert_array_equal(back.values, values)
        assert back.axis_roles == ["parameter", "spatial", "temporal"]
        assert back.mask is None

    def test_mask_round_trip(self, tmp_path):
        rng = np.random.default_rng(1)
        values = rng.standard_normal((4, 3))
        mask = rng.random((4, 3)) > 0.5
        values[~mask] = np.nan
        path = tmp_path / "m.kgp"
        write_tensor(path, values, ["spatial", "temporal"], mask=mask)
        back = read_tensor(path)
        np.testing.assert_array_equal(back.mask, mask)
        np.testing.assert_array_equal(back.values[back.mask], values[mask])

    def test_header_is_one_json_line(self, tmp_path):
        path = tmp_path / "h.kgp"
        write_tensor(path, np.zeros((2, 2)), ["spatial", "spatial"])
        with open(path, "rb") as fh:
            header = json.loads(fh.readline())
        assert header["magic"] == "KGP1"
        assert header["dtype"] == "f64le"
        assert header["shape"] == [2, 2]

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "bad.kgp"
        with open(path, "wb") as fh:
            fh.write(b'{"magic": "NOPE", "dtype": "f64le", "shape": [1]}\n')
            fh.write(np.zeros(1).tobytes())
        with pytest.raises(ValidationError, match="magic"):
            read_tensor(path)

    def test_bad_dtype_rejected(self, tmp_path):
        path = tmp_path / "bad2.kgp"
        with open(path, "wb") as fh:
            fh.write(b'{"magic": "KGP1", "dtype": "f32le", "shape": [1], '
                     b'"axis_roles": ["spatial"], "mask_present": false}\n')
            fh.write(np.zeros(1, dtype="<f4").tobytes())
        with pytest.raises(ValidationError, match="dtype"):
            read_tensor(path)

    def test_truncated_payload_rejected(self, tmp_path):
        path = tmp_path / "short.kgp"
        with open(path, "wb") as fh:
            fh.write(b'{"magic": "KGP1", "dtype": "f64le", "shape": [4], '
                     b'"axis_roles": ["spatial"], "mask_present": false}\n')
            fh.write(np.zeros(2).tobytes())
        with pytest.raises(ValidationError, match="truncated"):
            read_tensor(path)


class TestRunConfig:
    def test_defaults_merge(self):
        cfg = validate_config({})
        assert cfg["training"]["beta1"] == 0.5
        assert cfg["training"]["weight_decay"] == 2.5e-5
        assert cfg["gappy"]["cg_maxiter"] == 2000

    def test_unknown_top_level_key_rejected(self):
        with pytest.raises(ValidationError, match="<root>"):
            validate_config({"tarining": {}})

    def test_unknown_nested_key_rejected(self):
        with pytest.raises(ValidationError, match="training"):
            validate_config({"training": {"learning_rat": 0.1}})

    def test_bad_enum_rejected(self):
        with pytest.raises(ValidationError, match="kernel"):
            validate_config({"kernel": {"family": "cubic"}})

    def test_user_values_override_defaults(self):
        cfg = validate_config({"training": {"max_iters": 7}})
        assert cfg["training"]["max_iters"] == 7
        assert cfg["training"]["learning_rate"] == 1e-2


@pytest.fixture()
def burgers_data(tmp_path):
    cfg = write_config(tmp_path / "gen.json", {
        "seed": 11,
        "dataset": {"preset": "burgers", "n_param": 2, "m_spatial": 12,
                    "n_time": 6, "t_final": 8.0},
        "output": {"dir": str(tmp_path / "data")},
    })
    assert main(["generate", "--config", cfg]) == 0
    return tmp_path


class TestCliGenerate:
    def test_burgers_preset_writes_snapshots_and_manifest(self, burgers_data):
        out = burgers_data / "data"
        manifest = read_json(out / "manifest.json")
        assert len(manifest["files"]) == 2
        assert len(manifest["parameters"]) == 2
        snap = read_tensor(out / manifest["files"][0])
        assert snap.values.shape == (12, 6)

    def test_same_seed_byte_identical(self, tmp_path):
        doc = {
            "seed": 3,
            "dataset": {"preset": "burgers", "n_param": 2, "m_spatial": 8,
                        "n_time": 4, "t_final": 5.0},
        }
        for d in ("a", "b"):
            doc["output"] = {"dir": str(tmp_path / d)}
            cfg = write_config(tmp_path / f"{d}.json", doc)
            assert main(["generate", "--config", cfg]) == 0
        for name in ("snap_000.kgp", "snap_001.kgp", "manifest.json"):
            a = (tmp_path / "a" / name).read_bytes()
            b = (tmp_path / "b" / name).read_bytes()
            assert a == b, name

    def test_invalid_mu_exits_2(self, tmp_path):
        cfg = write_config(tmp_path / "bad.json", {
            "dataset": {"preset": "burgers", "n_param": 1,
                        "parameters": [[9.0, 0.02]],
                        "m_spatial": 8, "n_time": 4},
            "output": {"dir": str(tmp_path / "x")},
        })
        assert main(["generate", "--config", cfg]) == 2

    def test_unknown_config_key_exits_2(self, tmp_path):
        cfg = write_config(tmp_path / "bad2.json", {"dadaset": {}})
        assert main(["generate", "--config", cfg]) == 2

    def test_usage_error_exits_1(self):
        assert main(["generate"]) == 1
        assert main(["no-such-command"]) == 1


class TestCliTrain:
    def test_zero_iterations_model_is_reproducible_and_fast(self, burgers_data):
        t0 = time.perf_counter()
        outs = []
        for d in ("m1", "m2"):
            cfg = write_config(burgers_data / f"tr_{d}.json", {
                "seed": 11,
                "data": {"manifest": str(burgers_data / "data" / "manifest.json")},
                "kernel": {"deep": False, "family": "matern52"},
                "training": {"max_iters": 0},
                "output": {"dir": str(burgers_data / d)},
            })
            assert main(["train", "--config", cfg]) == 0
            outs.append(burgers_data / d)
        assert time.perf_counter() - t0 < 10.0
        m1 = (outs[0] / "model.json").read_bytes()
        m2 = (outs[1] / "model.json").read_bytes()
        assert m1 == m2
        doc = read_json(outs[0] / "model.json")
        trace = (outs[0] / "trace.csv").read_text().strip().split("\n")
        assert len(trace) == 2  # header + init row
        init_nlml = float(trace[1].split(",")[1])
        assert doc["final_nlml"] == pytest.approx(init_nlml)

    def test_gappy_train_records_cg_iterations(self, tmp_path):
        gen = write_config(tmp_path / "g.json", {
            "seed": 5,
            "dataset": {"preset": "gappy2d", "n_param": 2, "nx": 7, "ny": 7,
                        "n_time": 3},
            "output": {"dir": str(tmp_path / "gdata")},
        })
        assert main(["generate", "--config", gen]) == 0
        tr = write_config(tmp_path / "gt.json", {
            "seed": 5,
            "data": {"manifest": str(tmp_path / "gdata" / "manifest.json")},
            "kernel": {"deep": False, "family": "se"},
            "training": {"max_iters": 1},
            "output": {"dir": str(tmp_path / "gmodel")},
        })
        assert main(["train", "--config", tr]) == 0
        lines = (tmp_path / "gmodel" / "trace.csv").read_text().strip().split("\n")
        assert lines[0].split(",")[-1] == "cg_iters"
        assert int(lines[1].split(",")[-1]) > 0


class TestCliPredict:
    def test_rectilinear_emits_mean_and_var(self, burgers_data):
        cfg = write_config(burgers_data / "tr.json", {
            "seed": 11,
            "data": {"manifest": str(burgers_data / "data" / "manifest.json")},
            "kernel": {"deep": False},
            "training": {"max_iters": 1},
            "output": {"dir": str(burgers_data / "model")},
        })
        assert main(["train", "--config", cfg]) == 0
        pr = write_config(burgers_data / "pr.json", {
            "predict": {"parameters": [[4.6, 0.02]], "times": [0.0, 4.0]},
            "output": {"dir": str(burgers_data / "pred")},
        })
        assert main(["predict", "--model", str(burgers_data / "model"),
                     "--config", pr]) == 0
        mean = read_tensor(burgers_data / "pred" / "mean.kgp")
        var = read_tensor(burgers_data / "pred" / "var.kgp")
        assert mean.values.shape == (1, 12, 2)
        assert var.values.min() >= 0.0

    def test_gappy_emits_variance_bounds(self, tmp_path):
        gen = write_config(tmp_path / "g.json", {
            "seed": 6,
            "dataset": {"preset": "gappy2d", "n_param": 2, "nx": 6, "ny": 6,
                        "n_time": 2},
            "output": {"dir": str(tmp_path / "gd")},
        })
        assert main(["generate", "--config", gen]) == 0
        tr = write_config(tmp_path / "t.json", {
            "seed": 6,
            "data": {"manifest": str(tmp_path / "gd" / "manifest.json")},
            "kernel": {"deep": False, "family": "se"},
            "training": {"max_iters": 0},
            "output": {"dir": str(tmp_path / "gm")},
        })
        assert main(["train", "--config", tr]) == 0
        assert main(["predict", "--model", str(tmp_path / "gm"),
                     "--out", str(tmp_path / "gp")]) == 0
        lower = read_tensor(tmp_path / "gp" / "var_lower.kgp")
        upper = read_tensor(tmp_path / "gp" / "var_upper.kgp")
        assert lower.values.shape == upper.values.shape
        assert np.all(lower.values <= upper.values + 1e-10)


class TestCliVerify:
    @pytest.mark.parametrize("suite", ["kron", "oracle", "lemma1", "lemma2",
                                       "logdet"])
    def test_suites_pass_clean(self, suite, tmp_path):
        assert main(["verify", "--suite", suite,
                     "--out", str(tmp_path)]) == 0
        report = read_json(tmp_path / f"verify_{suite}.json")
        assert report["passed"] is True
        assert all("margin" in c for c in report["checks"])

    def test_pseudovalue_perturbation_fails_lemma1(self, tmp_path, monkeypatch):
        monkeypatch.setenv("KGP_PERTURB", "pseudovalues")
        assert main(["verify", "--suite", "lemma1",
                     "--out", str(tmp_path)]) != 0

    def test_kron_factor_perturbation_fails_oracle(self, tmp_path, monkeypatch):
        monkeypatch.setenv("KGP_PERTURB", "kron")
        assert main(["verify", "--suite", "oracle",
                     "--out", str(tmp_path)]) != 0


class TestCliBench:
    def test_bench_csv_schema(self, tmp_path):
        assert main(["bench", "--sizes", "16,32,64", "--repeats", "1",
                     "--out", str(tmp_path)]) == 0
        lines = (tmp_path / "bench.csv").read_text().strip().split("\n")
        header = lines[0].split(",")
        assert header[:3] == ["M", "n_total", "t_nlml"]
        assert "ratio_nlml" in header and "t_dense" in header
        assert len(lines) == 4
        # monotone sizes, ratio column empty on the first row
        first = lines[1].split(",")
        second = lines[2].split(",")
        assert first[header.index("ratio_nlml")] == ""
        assert second[header.index("ratio_nlml")] != ""
        # dense column populated only under the cap (all are, here)
        assert first[header.index("t_dense")] != ""

    def test_bad_sizes_exits_2(self, tmp_path):
        assert main(["bench", "--sizes", "a,b", "--out", str(tmp_path)]) == 2

    def test_kernel_backend_bench(self, tmp_path):
        assert main(["bench-kernels", "--repeats", "1",
                     "--out", str(tmp_path)]) == 0
        lines = (tmp_path / "bench_kernels.csv").read_text().strip().split("\n")
        assert lines[0] == "kernel,size,backend,seconds,speedup"
        assert len(lines) >= 5
