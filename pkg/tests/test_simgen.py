"""Synthetic process generator, fault injection and CSV input/output."""

import numpy as np
import pytest

from blockwatch import simgen
from blockwatch.core import TEP_PARTITION, StreamMatrix
from blockwatch.errors import ConfigError, DataError, SchemaError
from blockwatch.simgen import FaultSpec


@pytest.fixture(scope="module")
def spec():
    return simgen.default_spec(0)


@pytest.fixture(scope="module")
def long_run(spec):
    return simgen.generate(spec, 10000, seed=1)


class TestSpec:
    def test_default_layout(self, spec):
        assert spec.n_variables == 31
        assert spec.partition() == TEP_PARTITION
        assert spec.state_dims == [3, 2, 4, 3]
        assert simgen.spectral_radius(spec.transition_matrix()) < 0.95

    def test_unstable_dynamics_rejected(self, spec):
        blk = spec.blocks[0]
        bad = simgen.BlockDynamics(blk.A * 5, blk.C, blk.variables)
        with pytest.raises(ConfigError, match="spectral radius"):
            simgen.ProcessSpec((bad, *spec.blocks[1:]), spec.coupling, spec.links,
                               spec.variable_names)

    def test_outputs_must_cover_variables(self, spec):
        with pytest.raises(ConfigError):
            simgen.ProcessSpec(spec.blocks[:3], spec.coupling[:3, :3], spec.links[:2],
                               spec.variable_names)

    def test_digest_depends_on_seed(self):
        assert simgen.default_spec(0).digest() == simgen.default_spec(0).digest()
        assert simgen.default_spec(0).digest() != simgen.default_spec(1).digest()


class TestGenerate:
    def test_zero_noise_is_zero(self):
        quiet = simgen.default_spec(0, process_noise=0.0, measurement_noise=0.0)
        assert np.all(simgen.generate(quiet, 100, seed=3).values == 0.0)

    def test_same_seed_same_stream(self, spec):
        a = simgen.generate(spec, 500, seed=9).values
        b = simgen.generate(spec, 500, seed=9).values
        assert a.tobytes() == b.tobytes()
        assert not np.array_equal(a, simgen.generate(spec, 500, seed=10).values)

    def test_dynamics_present(self, long_run):
        assert np.all(simgen.lag1_autocorrelation(long_run.values) > 0.2)

    def test_stationary_halves(self, long_run):
        z_mean, z_sd = simgen.half_moment_z(long_run.values)
        assert np.all(np.abs(z_mean) < 3)
        assert np.all(np.abs(z_sd) < 3)

    def test_metadata(self, spec):
        s = simgen.generate(spec, 10, seed=4)
        assert s.meta == {"seed": 4, "spec_hash": spec.digest()}

    def test_requires_positive_length(self, spec):
        with pytest.raises(ValueError):
            simgen.generate(spec, 0)


class TestFaults:
    @pytest.fixture(scope="class")
    @classmethod
    def base(cls):
        spec = simgen.default_spec(0)
        ref = simgen.generate(spec, 10000, seed=1).values.std(axis=0)
        return simgen.generate(spec, 2400, seed=2), ref

    def test_zero_magnitude_is_identity(self, base):
        s, sd = base
        for kind in simgen.FAULT_KINDS:
            out = simgen.inject_fault(s, FaultSpec(kind, (3,), 0.0, 600), sd)
            np.testing.assert_array_equal(out.values, s.values)

    def test_step_shift(self, base):
        s, sd = base
        out = simgen.inject_fault(s, FaultSpec("step", (6, 7), 2.0, 600), sd)
        diff = out.values - s.values
        np.testing.assert_allclose(diff[600:, [6, 7]], np.broadcast_to(2 * sd[[6, 7]], (1800, 2)))
        assert np.all(diff[:600] == 0)
        shift = out.values[600:, 6].mean() - s.values[:600, 6].mean()
        assert abs(shift - 2 * sd[6]) < 4 * sd[6] / np.sqrt(600) * 3

    def test_random_variation(self, base):
        s, sd = base
        out = simgen.inject_fault(s, FaultSpec("random_variation", (8,), 3.0, 600, seed=5), sd)
        added = (out.values - s.values)[600:, 8]
        assert abs(added.std() / (3 * sd[8]) - 1) < 0.05
        assert abs(added.mean()) < 4 * 3 * sd[8] / np.sqrt(1800)

    def test_slow_drift_reaches_magnitude_at_end(self, base):
        s, sd = base
        out = simgen.inject_fault(s, FaultSpec("slow_drift", (0,), 3.0, 600), sd)
        added = (out.values - s.values)[:, 0]
        assert np.all(added[:601] == 0)
        assert added[-1] == pytest.approx(3 * sd[0], rel=1e-12)
        assert np.all(np.diff(added[600:]) > 0)

    def test_sticking_freezes(self, base):
        s, sd = base
        out = simgen.inject_fault(s, FaultSpec("sticking", (4, 5), 3.0, 600), sd)
        assert np.all(np.ptp(out.values[600:, [4, 5]], axis=0) == 0)  # zero variance, exactly
        np.testing.assert_array_equal(out.values[600, [4, 5]], s.values[600, [4, 5]])

    def test_other_variables_untouched(self, base):
        s, sd = base
        for kind in simgen.FAULT_KINDS:
            out = simgen.inject_fault(s, FaultSpec(kind, (9, 10), 3.0, 600, seed=1), sd)
            others = [j for j in range(31) if j not in (9, 10)]
            np.testing.assert_array_equal(out.values[:, others], s.values[:, others])
            np.testing.assert_array_equal(out.values[:600], s.values[:600])
            assert out.meta["onset"] == 600 and out.meta["fault"]["kind"] == kind

    def test_deterministic(self, base):
        s, sd = base
        f = FaultSpec("random_variation", (1,), 3.0, 100, seed=8)
        a, b = simgen.inject_fault(s, f, sd), simgen.inject_fault(s, f, sd)
        assert a.values.tobytes() == b.values.tobytes()

    def test_validation(self, base):
        s, sd = base
        with pytest.raises(ConfigError):
            FaultSpec("spike", (0,), 1.0, 10)
        with pytest.raises(ConfigError):
            FaultSpec("step", (0,), -1.0, 10)
        with pytest.raises(ConfigError):
            simgen.inject_fault(s, FaultSpec("step", (0,), 1.0, 2400), sd)
        with pytest.raises(ConfigError):
            simgen.inject_fault(s, FaultSpec("step", (31,), 1.0, 10), sd)

    def test_no_coupling_locality(self):
        spec = simgen.default_spec(0, coupling=0.0)
        T = 20000
        s = simgen.generate(spec, T, seed=3)
        sd = s.values.std(axis=0)
        out = simgen.inject_fault(s, FaultSpec("step", spec.blocks[1].variables, 3.0, 600), sd)
        others = [j for j in range(31) if j not in spec.blocks[1].variables]
        np.testing.assert_array_equal(out.values[:, others], s.values[:, others])


class TestCsv:
    def test_round_trip_is_exact(self, spec, tmp_path):
        s = simgen.generate(spec, 50, seed=1)
        p = tmp_path / "x.csv"
        simgen.write_csv(s, p, {"onset": None})
        back = simgen.load_csv(p)
        assert back.values.tobytes() == s.values.tobytes()
        assert back.variable_names == s.variable_names
        assert back.meta == {"onset": None}

    def test_sidecar_onset(self, spec, tmp_path):
        s = simgen.generate(spec, 2400, seed=1)
        p = tmp_path / "fault.csv"
        simgen.write_csv(s, p, {"onset": 600})
        assert simgen.sidecar_path(p).name == "fault.meta.json"
        assert simgen.load_csv(p).meta["onset"] == 600

    def test_header_mismatch_names_columns(self, tmp_path):
        p = tmp_path / "x.csv"
        simgen.write_csv(StreamMatrix(("a", "b"), np.zeros((2, 2))), p)
        with pytest.raises(SchemaError, match=r"missing columns \['c'\].*unexpected columns \['b'\]"):
            simgen.load_csv(p, expected_names=("a", "c"))

    def test_first_column_must_be_index(self, tmp_path):
        p = tmp_path / "x.csv"
        p.write_text("t,a\n0,1\n")
        with pytest.raises(SchemaError):
            simgen.load_csv(p)

    @pytest.mark.parametrize("body,needle", [
        ("sample_index,a,b\n0,1,2\n1,3\n", ":3:"),
        ("sample_index,a,b\n0,1,2\n1,x,2\n", ":3:"),
        ("sample_index,a,b\n0,1,nan\n", ":2:"),
        ("sample_index,a,b\n0,1,inf\n", ":2:"),
    ], ids=["short_row", "not_a_number", "nan", "inf"])
    def test_malformed_rows_report_line(self, tmp_path, body, needle):
        p = tmp_path / "x.csv"
        p.write_text(body)
        with pytest.raises(DataError, match=needle):
            simgen.load_csv(p)

    def test_missing_and_empty(self, tmp_path):
        with pytest.raises(DataError):
            simgen.load_csv(tmp_path / "nope.csv")
        (tmp_path / "e.csv").write_text("")
        with pytest.raises(DataError):
            simgen.load_csv(tmp_path / "e.csv")


def test_half_moment_z_flags_a_level_shift():
    rng = np.random.default_rng(42)
    x = rng.standard_normal((4000, 2))
    x[2000:, 1] += 0.5
    z_mean, _ = simgen.half_moment_z(x)
    assert abs(z_mean[0]) < 3 and abs(z_mean[1]) > 3
