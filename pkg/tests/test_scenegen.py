import json

import numpy as np
import pytest

from hope.errors import ScenarioError
from hope.ghn import build_hyperedges, edge_membership, max_hyperedge_membership
from hope.lid import estimate_lid
from hope.scenegen import (
    CHANNELS,
    PROFILES,
    SCENE_TYPES,
    Occlusion,
    ScenarioConfig,
    apply_occlusions,
    gen_manifold,
    gen_scene,
    layout_agents,
    membership_ok,
    mixed_stream,
    occlusion_scenario,
    read_observations,
    scaling_scene,
    write_scenario,
)


def present(scenario, frame):
    return {o.id_hint for o in scenario.observations[frame].objects}


# -- manifolds -------------------------------------------------------------------


@pytest.mark.parametrize("kind", ["linear", "curved"])
def test_manifold_deterministic(kind):
    a = gen_manifold(3, 7, 500, kind, seed=5)
    b = gen_manifold(3, 7, 500, kind, seed=5)
    np.testing.assert_array_equal(a.points, b.points)
    assert a.points.shape == (500, 7)


def test_linear_manifold_has_rank_d():
    X = gen_manifold(4, 10, 300, "linear", seed=1).points
    s = np.linalg.svd(X - X.mean(0), compute_uv=False)
    assert s[3] > 1e-3 and s[4] < 1e-10


@pytest.mark.parametrize("d, n", [(4, 3), (0, 3)])
def test_manifold_bad_dimension(d, n):
    with pytest.raises(ScenarioError):
        gen_manifold(d, n, 100)


def test_manifold_other_errors():
    with pytest.raises(ScenarioError):
        gen_manifold(1, 3, 0)
    with pytest.raises(ScenarioError, match="unknown manifold kind"):
        gen_manifold(1, 3, 10, "spiral")


# -- layouts ----------------------------------------------------------------------


@pytest.mark.parametrize("seed", range(5))
def test_layout_respects_cap_and_separation(seed):
    rng = np.random.default_rng(seed)
    pos, groups = layout_agents(120, 30.0, 30.0, 0.5, 3.0, rng, min_sep=1.0)
    assert membership_ok(pos, 0.5, 3.0)
    d = np.linalg.norm(pos[:, None] - pos[None], axis=-1)
    assert d[np.triu_indices(len(pos), 1)].min() >= 1.0
    assert groups.shape == (120,)


def test_layout_infeasible():
    with pytest.raises(ScenarioError, match="infeasible scene"):
        layout_agents(50, 5.0, 5.0, 0.5, 3.0, np.random.default_rng(0))
    with pytest.raises(ScenarioError, match="infeasible scene"):
        layout_agents(0, 5.0, 5.0, 0.5, 3.0, np.random.default_rng(0))


# -- scenes -----------------------------------------------------------------------


def test_zero_agents_is_infeasible():
    with pytest.raises(ScenarioError, match="infeasible scene"):
        gen_scene(ScenarioConfig("urban", num_agents=0))


def test_overtight_cap_is_infeasible():
    with pytest.raises(ScenarioError, match="infeasible scene"):
        gen_scene(ScenarioConfig("construction", eps_s=30.0, rho_max=1e-4), max_resamples=2)


@pytest.mark.parametrize("kwargs, msg", [
    ({"scene_type": "desert"}, "unknown scene type"),
    ({"frames": 0}, "frames"),
    ({"motion_dims": 14}, "motion_dims"),
    ({"noise_level": -1.0}, "noise_level"),
])
def test_config_validation(kwargs, msg):
    with pytest.raises(ScenarioError, match=msg):
        ScenarioConfig(**kwargs)


def test_config_takes_profile_defaults_and_roundtrips():
    cfg = ScenarioConfig("intersection", occlusions=[{"object_id": 1, "start_frame": 0, "duration_frames": 2}])
    prof = PROFILES["intersection"]
    assert (cfg.num_agents, cfg.motion_dims, cfg.noise_level) == (prof.num_agents, prof.motion_dims, prof.noise_level)
    assert cfg.occlusions == (Occlusion(1, 0, 2),)
    assert ScenarioConfig.from_dict(cfg.to_dict()) == cfg


@pytest.mark.parametrize("scene_type", SCENE_TYPES)
def test_scene_is_deterministic_and_well_formed(scene_type):
    cfg = ScenarioConfig(scene_type, frames=3, seed=4)
    a, b = gen_scene(cfg), gen_scene(cfg)
    for x, y in zip(a.clouds, b.clouds):
        np.testing.assert_array_equal(x.points, y.points)
    np.testing.assert_array_equal(a.positions, b.positions)
    assert a.clouds[0].ambient_dim == CHANNELS
    assert a.positions.shape == (3, cfg.num_agents, 2)
    assert [len(o.objects) for o in a.observations] == [cfg.num_agents] * 3
    # ground-truth ids are the agent indices in every frame
    assert all(present(a, f) == set(range(cfg.num_agents)) for f in range(3))


@pytest.mark.parametrize("scene_type", SCENE_TYPES)
def test_every_frame_respects_density_cap(scene_type):
    cfg = ScenarioConfig(scene_type, frames=5, seed=2)
    sc = gen_scene(cfg)
    bound = max_hyperedge_membership(cfg.rho_max, cfg.eps_s)
    for f in range(cfg.frames):
        hg = sc.hypergraph(f)
        edges = build_hyperedges(hg.agents, cfg.eps_s, 10.0)
        assert edge_membership(edges, len(hg)).max() <= bound


def test_positions_follow_constant_velocity():
    sc = gen_scene(ScenarioConfig("suburban", frames=4, seed=1))
    np.testing.assert_allclose(sc.positions[3] - sc.positions[0], 0.3 * sc.velocities, atol=1e-12)


@pytest.mark.parametrize("scene_type, lo, hi", [("highway", 0.0, 5.0), ("construction", 12.0, 20.0)])
def test_lid_bands_single_seed(scene_type, lo, hi):
    d = estimate_lid(gen_scene(ScenarioConfig(scene_type, seed=0)).clouds[0]).d_hat
    assert lo < d < hi


# -- occlusions -------------------------------------------------------------------


def base_scene(frames=60):
    return gen_scene(ScenarioConfig("highway", num_agents=6, frames=frames, seed=9))


def test_zero_duration_occlusion_is_a_no_op():
    sc = base_scene()
    out = apply_occlusions(sc, [Occlusion(2, 5, 0)])
    assert all(present(out, f) == present(sc, f) for f in range(60))
    for a, b in zip(out.clouds, sc.clouds):
        np.testing.assert_array_equal(a.points, b.points)


def test_occlusion_window_is_exact():
    sc = apply_occlusions(base_scene(), [Occlusion(3, 10, 40)])
    for f in range(60):
        assert (3 in present(sc, f)) == (not 10 <= f < 50)
        assert (3 in sc.owners[f]) == (not 10 <= f < 50)
    # ground truth keeps the object
    assert sc.positions.shape[1] == 6


def test_overlapping_scripts_apply_independently():
    sc = base_scene()
    both = apply_occlusions(sc, [Occlusion(1, 5, 20), Occlusion(4, 15, 20)])
    for f in range(60):
        expected = set(range(6)) - ({1} if 5 <= f < 25 else set()) - ({4} if 15 <= f < 35 else set())
        assert present(both, f) == expected
    assert len(both.config.occlusions) == 2


def test_occlusions_idempotent_and_config_driven():
    cfg = ScenarioConfig("highway", num_agents=6, frames=60, seed=9, occlusions=(Occlusion(3, 10, 40),))
    sc = gen_scene(cfg)
    again = apply_occlusions(sc)
    assert all(present(sc, f) == present(again, f) for f in range(60))
    assert 3 not in present(sc, 20)


@pytest.mark.parametrize("occ, msg", [
    (Occlusion(6, 0, 5), "unknown object_id"),
    (Occlusion(0, 55, 10), "outside"),
    (Occlusion(0, -1, 3), "outside"),
])
def test_occlusion_errors(occ, msg):
    with pytest.raises(ScenarioError, match=msg):
        apply_occlusions(base_scene(), [occ])


def test_scripted_occlusion_suite_layout():
    sc = occlusion_scenario(40)
    assert sc.config.frames == 20 + 40 + 20
    hidden = [f for f in range(sc.config.frames) if 1 not in present(sc, f)]
    assert hidden == list(range(20, 60))


@pytest.mark.parametrize("seed", range(5))
def test_randomized_suite_windows(seed):
    sc = occlusion_scenario(30, seed=seed, randomized=True)
    for o in sc.config.occlusions:
        assert o.duration_frames == 30
        gone = [f for f in range(sc.config.frames) if o.object_id not in present(sc, f)]
        assert gone == list(range(o.start_frame, o.start_frame + 30))


def test_occlusion_scenario_rejects_negative_gap():
    with pytest.raises(ScenarioError):
        occlusion_scenario(-1)


# -- I/O and streams --------------------------------------------------------------


def test_scenario_directory_roundtrip(tmp_path):
    sc = gen_scene(ScenarioConfig("urban", frames=2, seed=3))
    out = write_scenario(sc, tmp_path / "s")
    assert sorted(p.name for p in (out / "frames").iterdir()) == [
        "frame_00000.hpc", "frame_00001.hpc", "obs_00000.json", "obs_00001.json",
    ]
    truth = json.loads((out / "scenario.json").read_text())
    assert truth["config"]["scene_type"] == "urban"
    obs = read_observations(out)
    assert [o.timestamp for o in obs] == [0.0, 0.1]
    np.testing.assert_array_equal(obs[1].objects[2].position, sc.observations[1].objects[2].position)
    with pytest.raises(ScenarioError, match="no observation files"):
        read_observations(tmp_path)


def test_mixed_stream_composition():
    stream = mixed_stream(20, seed=2, num_agents=24)
    types = [s.config.scene_type for s in stream]
    assert types.count("highway") == round(0.61 * 20)
    assert set(types) - {"highway"} <= set(SCENE_TYPES)
    assert all(s.num_agents == 24 for s in stream)
    assert [s.config.scene_type for s in mixed_stream(20, seed=2, num_agents=24)] == types


def test_scaling_scene_is_capped_and_deterministic():
    a, b = scaling_scene(256, seed=1), scaling_scene(256, seed=1)
    np.testing.assert_array_equal(a.positions, b.positions)
    assert membership_ok(a.positions, 0.5, 3.0)
    assert len(a) == 256
