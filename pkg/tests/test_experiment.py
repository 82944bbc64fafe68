import numpy as np
import pytest
import scipy.linalg

from conftest import make_family, make_model
from shslab.errors import ConfigError
from shslab.experiment import (ExperimentConfig, SwitchingSequence, eigen_report,
                               generate_sequence, read_windows, run_experiment,
                               write_outputs)
from shslab.linsys import discretize_zoh, simulate

# coarse, fast experiment grid for unit tests; the acceptance suite runs the
# paper-scale one
TAU, TAU0, TS, SUB = 0.05, 0.005, 1e-5, 5


@pytest.fixture(scope="module")
def coarse_probe(m1_family):
    from shslab.probing import design_mami
    return design_mami(m1_family, m1_family[0].x_op, "delta", TAU0, TS)


def config(m1_family, probe, **kw):
    defaults = dict(family=m1_family, probe=probe, tau=TAU, tau0=TAU0, ts=TS,
                    K=5, seed=42, subsample=SUB)
    defaults.update(kw)
    return ExperimentConfig(**defaults)


def test_generate_sequence_single(m1_family, coarse_probe):
    cfg = config(m1_family, coarse_probe, K=1)
    seq = generate_sequence(cfg)
    assert len(seq) == 1
    assert 0 <= seq.alphas[0] < 4


def test_generate_sequence_deterministic(m1_family, coarse_probe):
    cfg = config(m1_family, coarse_probe, K=40, seed=7)
    assert generate_sequence(cfg) == generate_sequence(cfg)
    other = config(m1_family, coarse_probe, K=40, seed=8)
    assert generate_sequence(cfg) != generate_sequence(other)


def test_sequence_frequencies_uniform(m1_family, coarse_probe):
    counts = np.zeros(4)
    for seed in range(1000):
        cfg = config(m1_family, coarse_probe, K=40, seed=seed)
        for a in generate_sequence(cfg).alphas:
            counts[a] += 1
    freq = counts / counts.sum()
    assert np.all(np.abs(freq - 0.25) < 0.05)


def test_run_noise_free_all_correct(m1_family, coarse_probe):
    cfg = config(m1_family, coarse_probe, K=5, seed=3)
    result = run_experiment(cfg)
    assert result.accuracy == 1.0
    assert result.report.detected == list(result.sequence.alphas)


def test_probe_off_ablation_mean_accuracy_below_one(m1_family, coarse_probe):
    accs = []
    for seed in range(5):
        cfg = config(m1_family, coarse_probe, K=5, seed=seed, probe_override_R=0.0)
        accs.append(run_experiment(cfg).accuracy)
    assert np.mean(accs) < 1.0


def test_state_continuity_across_switches(m1_family, coarse_probe):
    cfg = config(m1_family, coarse_probe, K=4, seed=1)
    seq = SwitchingSequence(alphas=(0, 2, 1, 3))  # switch every interval
    result = run_experiment(cfg, seq)
    dmodels = [discretize_zoh(sc, TS) for sc in m1_family]
    hold = [scipy.linalg.expm(sc.A * (TAU - TAU0)) for sc in m1_family]
    steps = int(round(TAU0 / TS))
    x = np.zeros(18)
    for k, a in enumerate(seq.alphas):
        assert np.array_equal(result.boundary_states[k], x)
        # window starts exactly at the carried-over state
        y0 = dmodels[a].C @ x
        assert np.allclose(result.windows[k].samples[0], y0, rtol=0, atol=1e-12)
        u1 = result.windows[k].u1
        trace = simulate(dmodels[a], x, u1, result.windows[k].u2, steps,
                         record_states=True)
        x = hold[a] @ trace.final_state
    assert np.array_equal(result.boundary_states[4], x)


def test_probe_occupies_window_only(m1_family, coarse_probe):
    cfg = config(m1_family, coarse_probe, K=2, seed=5)
    result = run_experiment(cfg)
    steps = int(round(TAU0 / TS))
    for w in result.windows:
        assert np.all(w.u1[:steps, 1] == coarse_probe.R)
        assert np.all(w.u1[:steps, [0, 2]] == 0.0)
        assert np.all(w.u1[steps] == 0.0)
    # unforced propagation across the probe-off remainder matches fine ZOH
    dmodel = discretize_zoh(m1_family[result.sequence.alphas[0]], TS)
    trace = simulate(dmodel, result.boundary_states[0],
                     result.windows[0].u1, result.windows[0].u2, steps,
                     record_states=True)
    gap_steps = int(round((TAU - TAU0) / TS))
    relax = simulate(dmodel, trace.final_state, None, None, gap_steps,
                     record_states=True)
    assert np.allclose(relax.final_state, result.boundary_states[1],
                       rtol=1e-8, atol=1e-10)


def test_noise_touches_windows_not_state(m1_family, coarse_probe):
    clean = run_experiment(config(m1_family, coarse_probe, K=3, seed=9))
    noisy = run_experiment(config(m1_family, coarse_probe, K=3, seed=9,
                                  noise_sigma=1e-3))
    assert np.array_equal(clean.boundary_states, noisy.boundary_states)
    assert not np.array_equal(clean.windows[0].samples, noisy.windows[0].samples)


def test_x0_random_mode_scaled_to_mu0(m1_family, coarse_probe):
    cfg = config(m1_family, coarse_probe, K=1, seed=2, x0_mode="random")
    result = run_experiment(cfg)
    assert np.max(np.abs(result.boundary_states[0])) == pytest.approx(
        coarse_probe.mu0, rel=1e-12)
    again = run_experiment(cfg)
    assert np.array_equal(result.boundary_states, again.boundary_states)


def test_config_validation(m1_family, coarse_probe):
    with pytest.raises(ConfigError, match="tau/10"):
        config(m1_family, coarse_probe, tau0=0.02)
    with pytest.raises(ConfigError, match="whole number"):
        config(m1_family, coarse_probe, tau=0.0500001)
    with pytest.raises(ConfigError, match="K"):
        config(m1_family, coarse_probe, K=0)
    with pytest.raises(ConfigError, match="x0_mode"):
        config(m1_family, coarse_probe, x0_mode="warm")
    with pytest.raises(ConfigError, match="noise"):
        config(m1_family, coarse_probe, noise_sigma=-1.0)


def test_sequence_entry_out_of_range(m1_family, coarse_probe):
    cfg = config(m1_family, coarse_probe, K=2)
    with pytest.raises(ConfigError, match="outside"):
        run_experiment(cfg, SwitchingSequence(alphas=(0, 9)))


def test_k1_normal_only_trivially_accurate(m1_family, coarse_probe):
    from shslab.ssbuild import ScenarioFamily
    solo = ScenarioFamily(segment_id=1, scenarios=m1_family.scenarios[:1])
    cfg = ExperimentConfig(family=solo, probe=coarse_probe, tau=TAU, tau0=TAU0,
                           ts=TS, K=1, seed=0, subsample=SUB)
    result = run_experiment(cfg)
    assert result.accuracy == 1.0
    assert result.report.detected == [0]


def test_eigen_report_bundled(all_families):
    for fam in all_families.values():
        rep = eigen_report(fam)
        assert rep.all_hurwitz
        assert len(rep.eigenvalues) == len(fam)
        assert all(len(e) == fam[0].n for e in rep.eigenvalues)
        assert 0 <= rep.most_damped < len(fam)


def test_eigen_report_flags_instability():
    fam = make_family([make_model(np.array([[-1.0, 0.0], [0.0, 1.0]]))])
    rep = eigen_report(fam)
    assert not rep.all_hurwitz
    assert rep.max_real[0] == pytest.approx(1.0)


def test_eigen_report_csv(tmp_path, m1_family):
    rep = eigen_report(m1_family)
    path = tmp_path / "eigs.csv"
    rep.write_csv(path)
    lines = path.read_text().strip().splitlines()
    assert lines[0] == "alpha,re,im"
    assert len(lines) == 1 + 4 * 18
    first = lines[1].split(",")
    assert int(first[0]) == 0
    assert float(first[1]) == rep.eigenvalues[0][0].real


def test_write_and_read_windows_roundtrip(tmp_path, m1_family, coarse_probe):
    cfg = config(m1_family, coarse_probe, K=3, seed=13)
    result = run_experiment(cfg)
    out = tmp_path / "run"
    write_outputs(result, out, windows_mode="strided")
    assert (out / "truth.csv").exists()
    assert (out / "detected.csv").exists()
    assert (out / "sequence.csv").exists()
    assert (out / "report.json").exists()
    windows = read_windows(out / "windows", probe=None)
    assert len(windows) == 3
    stride = cfg.subsample
    for k, w in enumerate(windows):
        src = result.windows[k]
        idx = np.arange(0, src.steps + 1, stride)
        assert w.ts == TS * stride
        assert np.array_equal(w.samples, src.samples[idx])
        assert np.array_equal(w.u1, src.u1[idx])
        assert np.array_equal(w.u2, src.u2[idx])


def test_sequence_csv_contents(tmp_path, m1_family, coarse_probe):
    cfg = config(m1_family, coarse_probe, K=2, seed=21)
    result = run_experiment(cfg)
    write_outputs(result, tmp_path, windows_mode="none")
    rows = (tmp_path / "sequence.csv").read_text().strip().splitlines()
    assert rows[0] == "k,true,detected"
    for k, line in enumerate(rows[1:]):
        fields = line.split(",")
        assert int(fields[0]) == k + 1
        assert int(fields[1]) == result.sequence.alphas[k]
        assert int(fields[2]) == result.report.detected[k]
