import numpy as np
import pytest

from nettom import agents as ag
from nettom import cyberenv as ce
from nettom import graph_core as gc
from nettom.errors import ConfigError


def _ctx_and_env(tree30, seed=0):
    net, cm = tree30
    env = ce.CyberEnv(net, cm=cm)
    state = env.reset(seed)
    ctx = ce.EpisodeContext(net, cm, state.placement.hvns, state.entries)
    return env, state, ctx


class TestSpeciesSampling:
    def test_sparse_concentration_gives_near_one_hot(self):
        sample = ag.sample_species(alpha=0.01, count=10_000, dim=3, seed=3)
        peaks = np.array([max(m) for m in sample.members])
        assert (peaks > 0.95).mean() >= 0.90

    def test_members_on_simplex(self):
        sample = ag.sample_species(alpha=0.7, count=500, dim=6, seed=4)
        for member in sample.members:
            assert all(x >= 0 for x in member)
            assert abs(sum(member) - 1.0) <= 1e-9

    def test_deterministic(self):
        a = ag.sample_species(0.01, 50, 3, seed=9)
        b = ag.sample_species(0.01, 50, 3, seed=9)
        assert a.members == b.members

    def test_rejects_bad_arguments(self):
        with pytest.raises(ValueError, match="alpha"):
            ag.sample_species(0.0, 1, 3, seed=0)
        with pytest.raises(ValueError, match="count"):
            ag.sample_species(0.5, 0, 3, seed=0)


class TestBluePolicies:
    def test_sleep_always_does_nothing(self, tree30):
        env, state, ctx = _ctx_and_env(tree30)
        policy = ag.make_blue("blue.sleep")
        rng = np.random.default_rng(0)
        policy.begin_episode(ctx, rng)
        for _ in range(10):
            assert policy.act(env.observe(ce.OBSERVER_BLUE), rng).kind \
                == ce.BLUE_DO_NOTHING

    def test_perimeter_cleaner_inside_reach(self, tree30):
        env, state, ctx = _ctx_and_env(tree30)
        net, cm = ctx.net, ctx.cm
        hvn = ctx.hvns[0]
        two_hops = int(np.flatnonzero(cm.dist[hvn] == 2)[0])
        state.compromised[two_hops] = True
        policy = ag.make_blue("blue.msn_d")
        rng = np.random.default_rng(0)
        policy.begin_episode(ctx, rng)
        # the entry foothold is also visible; take the closer threat
        state.compromised[net.entry_node] = False
        action = policy.act(env.observe(ce.OBSERVER_BLUE), rng)
        assert action == ce.BlueAction(ce.BLUE_MAKE_SAFE, two_hops)

    def test_perimeter_cleaner_scans_beyond_reach(self, tree30):
        env, state, ctx = _ctx_and_env(tree30)
        cm = ctx.cm
        state.compromised[:] = False
        candidates = np.flatnonzero(cm.dist[:, list(ctx.hvns)].min(axis=1) == 4)
        state.compromised[candidates[0]] = True
        policy = ag.make_blue("blue.msn_d")
        rng = np.random.default_rng(0)
        policy.begin_episode(ctx, rng)
        action = policy.act(env.observe(ce.OBSERVER_BLUE), rng)
        assert action.kind == ce.BLUE_SCAN

    def test_hidden_compromise_invisible_to_cleaner(self, tree30):
        env, state, ctx = _ctx_and_env(tree30)
        state.compromised[:] = False
        hvn = ctx.hvns[0]
        neighbor = ctx.net.neighbors[hvn][0]
        state.compromised[neighbor] = True
        state.hidden[neighbor] = True
        policy = ag.make_blue("blue.msn_d")
        rng = np.random.default_rng(0)
        policy.begin_episode(ctx, rng)
        assert policy.act(env.observe(ce.OBSERVER_BLUE), rng).kind == ce.BLUE_SCAN

    def test_isolate_cuts_entry_first(self, tree30):
        env, state, ctx = _ctx_and_env(tree30)
        policy = ag.make_blue("blue.isolate")
        rng = np.random.default_rng(0)
        policy.begin_episode(ctx, rng)
        first = policy.act(env.observe(ce.OBSERVER_BLUE), rng)
        assert first == ce.BlueAction(ce.BLUE_ISOLATE, ctx.net.entry_node)

    def test_stochastic_family_determinism_per_seed(self, tree30):
        net, cm = tree30
        red = ag.make_red(ag.parse_red_id(
            "red.hvt_pref_sp:alpha=0.01,seed=5,index=1"))
        for blue_id in ("blue.msn_s", "blue.restore", "blue.msn_rnv",
                        "blue.msn_restore", "blue.msn_rnv_restore"):
            a = ce.trajectory_to_jsonl(ce.rollout(
                net, ag.make_blue(blue_id), red, seed=77, cm=cm))
            b = ce.trajectory_to_jsonl(ce.rollout(
                net, ag.make_blue(blue_id), red, seed=77, cm=cm))
            assert a == b, blue_id


class TestRedTargetSelection:
    def test_degenerate_preference_picks_that_node(self, tree30):
        env, state, ctx = _ctx_and_env(tree30)
        spec = ag.RedPolicySpec(kind="hvt_pref_sp", params=(1.0, 0.0, 0.0))
        policy = ag.make_red(spec)
        policy.begin_episode(ctx, np.random.default_rng(0))
        assert policy._target == ctx.hvns[0]

    def test_uniform_preference_prefers_nearest(self):
        # entry at one end; candidate targets at hop distances 2, 5 and 9
        net = gc.Network.from_edges([(i, i + 1) for i in range(9)], entry_node=0)
        cm = gc.all_pairs_shortest_paths(net)
        ctx = ce.EpisodeContext(net, cm, hvns=(2, 5, 9), entries=(0,))
        third = 1.0 / 3.0
        spec = ag.RedPolicySpec(kind="hvt_pref_sp",
                                params=(third, third, 1.0 - 2 * third))
        policy = ag.make_red(spec)
        policy.begin_episode(ctx, np.random.default_rng(0))
        assert policy._target == 2

    def test_most_vulnerable_target_chosen(self, tree30):
        env, state, ctx = _ctx_and_env(tree30)
        net = ctx.net
        neighbors = list(net.neighbors[net.entry_node])
        pool = np.flatnonzero(ce.attackable_nodes(
            env.active_adjacency(), state.compromised, state.isolated,
            state.entries))
        state.vulnerability[:] = 0.3
        state.vulnerability[pool[-1]] = 0.9
        state.vulnerability[pool[0]] = 0.5
        spec = ag.RedPolicySpec(kind="target_vulnerable",
                                params=(0.0, 1.0, 0.0, 0.0, 0.0, 0.0))
        policy = ag.make_red(spec)
        rng = np.random.default_rng(0)
        policy.begin_episode(ctx, rng)
        action = policy.act(env.observe(ce.OBSERVER_RED), rng)
        assert action == ce.RedAction(ce.RED_BASIC_ATTACK, int(pool[-1]))

    def test_degree_targeting(self, tree30):
        env, state, ctx = _ctx_and_env(tree30)
        pool = np.flatnonzero(ce.attackable_nodes(
            env.active_adjacency(), state.compromised, state.isolated,
            state.entries))
        degrees = env.active_adjacency()[pool].sum(axis=1)
        rng = np.random.default_rng(0)
        for kind, pick in (("target_connected", pool[int(np.argmax(degrees))]),
                           ("target_unconnected", pool[int(np.argmin(degrees))])):
            spec = ag.RedPolicySpec(kind=kind,
                                    params=(0.0, 1.0, 0.0, 0.0, 0.0, 0.0))
            policy = ag.make_red(spec)
            policy.begin_episode(ctx, rng)
            assert policy.act(env.observe(ce.OBSERVER_RED), rng).target == pick


class TestRedBehaviour:
    def test_shortest_path_attacker_traces_a_shortest_path(self, tree30):
        net, cm = tree30
        for index in range(5):
            red = ag.make_red(ag.parse_red_id(
                f"red.hvt_pref_sp:alpha=0.01,seed=5,index={index}"))
            traj = ce.rollout(net, ag.make_blue("blue.sleep"), red,
                              seed=50 + index, cm=cm)
            assert traj.outcome == ce.RED_WIN
            attacked = []
            for step in traj.steps:
                for v in step.red_hits:
                    if v not in attacked:
                        attacked.append(v)
            path = [net.entry_node] + attacked
            assert path[-1] == traj.target_node
            assert len(path) - 1 == cm.dist[net.entry_node, traj.target_node]
            for a, b in zip(path, path[1:]):
                assert net.adjacency[a, b]

    def test_smart_never_wastes_zero_days(self, tree30):
        env, state, ctx = _ctx_and_env(tree30)
        state.zero_day_budget = 0
        spec = ag.RedPolicySpec(kind="random_smart",
                                params=(0.0, 0.0, 0.0, 1.0, 0.0, 0.0))
        policy = ag.make_red(spec)
        rng = np.random.default_rng(0)
        policy.begin_episode(ctx, rng)
        for _ in range(50):
            action = policy.act(env.observe(ce.OBSERVER_RED), rng)
            assert action.kind == ce.RED_BASIC_ATTACK

    def test_simple_wastes_zero_days(self, tree30):
        env, state, ctx = _ctx_and_env(tree30)
        state.zero_day_budget = 0
        spec = ag.RedPolicySpec(kind="random_simple",
                                params=(0.0, 0.0, 0.0, 1.0, 0.0, 0.0))
        policy = ag.make_red(spec)
        rng = np.random.default_rng(0)
        policy.begin_episode(ctx, rng)
        action = policy.act(env.observe(ce.OBSERVER_RED), rng)
        assert action.kind == ce.RED_ZERO_DAY  # and the env will no-op it

    def test_opportunist_strikes_adjacent_hvn(self, tree30):
        env, state, ctx = _ctx_and_env(tree30)
        hvn = ctx.hvns[0]
        neighbor = ctx.net.neighbors[hvn][0]
        state.compromised[neighbor] = True
        spec = ag.RedPolicySpec(kind="hvt_simple",
                                params=(1.0, 0.0, 0.0, 0.0, 0.0, 0.0))
        policy = ag.make_red(spec)
        rng = np.random.default_rng(0)
        policy.begin_episode(ctx, rng)
        action = policy.act(env.observe(ce.OBSERVER_RED), rng)
        assert action == ce.RedAction(ce.RED_ZERO_DAY, hvn)
        state.zero_day_budget = 0
        action = policy.act(env.observe(ce.OBSERVER_RED), rng)
        assert action == ce.RedAction(ce.RED_BASIC_ATTACK, hvn)

    def test_preference_attacker_deviates_sometimes(self, tree30):
        net, cm = tree30
        spec = ag.RedPolicySpec(kind="hvt_pref", params=(1.0, 0.0, 0.0))
        sp_spec = ag.RedPolicySpec(kind="hvt_pref_sp", params=(1.0, 0.0, 0.0))
        # same seeds: the non-SP variant takes at least as long on average
        durations = {"hvt_pref": [], "hvt_pref_sp": []}
        for seed in range(15):
            for label, s in (("hvt_pref", spec), ("hvt_pref_sp", sp_spec)):
                traj = ce.rollout(net, ag.make_blue("blue.sleep"),
                                  ag.make_red(s), seed=300 + seed, cm=cm)
                durations[label].append(traj.final_step)
        assert np.mean(durations["hvt_pref"]) > np.mean(durations["hvt_pref_sp"])

    def test_replans_around_isolation(self, tree30):
        net, cm = tree30
        env = ce.CyberEnv(net, cm=cm)
        state = env.reset(seed=1)
        ctx = ce.EpisodeContext(net, cm, state.placement.hvns, state.entries)
        red = ag.make_red(ag.RedPolicySpec(kind="hvt_pref_sp",
                                           params=(1.0, 0.0, 0.0)))
        rng = np.random.default_rng(0)
        red.begin_episode(ctx, rng)
        # sever the planned route mid-path; red must route around or stall
        mid = red._path[len(red._path) // 2]
        env.apply_blue(ce.BlueAction(ce.BLUE_ISOLATE, mid))
        action = red.act(env.observe(ce.OBSERVER_RED), rng)
        assert action.kind in (ce.RED_ZERO_DAY, ce.RED_BASIC_ATTACK,
                               ce.RED_DO_NOTHING)
        if action.target is not None:
            assert action.target != mid


class TestLegality:
    STATES_PER_POLICY = 10_000

    @pytest.mark.parametrize("blue_id", sorted(ag.BLUE_REGISTRY))
    def test_blue_actions_always_legal(self, tree30, blue_id):
        net, cm = tree30
        env = ce.CyberEnv(net, cm=cm)
        rng = np.random.default_rng(99)
        policy = ag.make_blue(f"blue.{blue_id}")
        for trial in range(self.STATES_PER_POLICY):
            state = self._randomize(env, rng, net, trial)
            if trial % 50 == 0:
                ctx = ce.EpisodeContext(net, cm, state.placement.hvns,
                                        state.entries)
                policy.begin_episode(ctx, rng)
            action = policy.act(env.observe(ce.OBSERVER_BLUE), rng)
            assert action.kind in ce.BLUE_ACTION_KINDS
            env.apply_blue(action)  # raises on anything illegal

    @pytest.mark.parametrize("red_kind", sorted(ag.RED_REGISTRY))
    def test_red_actions_always_legal(self, tree30, red_kind):
        net, cm = tree30
        env = ce.CyberEnv(net, cm=cm)
        rng = np.random.default_rng(98)
        spec = ag.RedPolicySpec(kind=red_kind, alpha=0.5)
        policy = ag.make_red(spec)
        for trial in range(self.STATES_PER_POLICY):
            state = self._randomize(env, rng, net, trial)
            if trial % 50 == 0:
                ctx = ce.EpisodeContext(net, cm, state.placement.hvns,
                                        state.entries)
                policy.begin_episode(ctx, rng)
            action = policy.act(env.observe(ce.OBSERVER_RED), rng)
            assert action.kind in ce.RED_ACTION_KINDS
            env.apply_red(action, rng)

    @staticmethod
    def _randomize(env, rng, net, trial):
        state = env.reset(seed=trial) if trial % 50 == 0 else env.state
        n = net.node_count
        state.compromised[:] = rng.random(n) < 0.3
        state.compromised[net.entry_node] |= rng.random() < 0.7
        state.hidden[:] = state.compromised & (rng.random(n) < 0.4)
        state.isolated[:] = rng.random(n) < 0.15
        env._adj_cache = None  # isolation was edited directly
        state.zero_day_budget = int(rng.integers(0, 3))
        return state


class TestRegistry:
    def test_blue_ids_resolve(self):
        for key in ag.BLUE_REGISTRY:
            assert ag.make_blue(f"blue.{key}").policy_id == f"blue.{key}"

    def test_unknown_ids_rejected(self):
        with pytest.raises(ConfigError, match="unknown blue"):
            ag.make_blue("blue.turtle")
        with pytest.raises(ConfigError, match="unknown red"):
            ag.parse_red_id("red.turtle:alpha=0.01")

    def test_member_id_round_trip(self):
        spec = ag.parse_red_id("red.hvt_pref_sp:alpha=0.01,seed=5,index=12")
        assert spec.params is not None
        assert len(spec.params) == 3
        assert spec.policy_id == "red.hvt_pref_sp:alpha=0.01,seed=5,index=12"
        again = ag.parse_red_id("red.hvt_pref_sp:alpha=0.01,seed=5,index=12")
        assert again.params == spec.params

    def test_species_id_draws_fresh_members(self, tree30):
        net, cm = tree30
        spec = ag.parse_red_id("red.hvt_pref_sp:alpha=0.01,seed=5")
        assert spec.alpha == 0.01 and spec.params is None
        policy = ag.make_red(spec)
        rng = np.random.default_rng(0)
        ctx = ce.EpisodeContext(net, cm, hvns=tuple(sorted(net.leaf_set)[1:4]),
                                entries=(net.entry_node,))
        policy.begin_episode(ctx, rng)
        first = tuple(policy._params)
        policy.begin_episode(ctx, rng)
        assert tuple(policy._params) != first

    def test_probs_grammar(self):
        spec = ag.parse_red_id("red.target_vulnerable:probs=0:1:0:0:0:0")
        assert spec.params == (0.0, 1.0, 0.0, 0.0, 0.0, 0.0)

    def test_malformed_arguments(self):
        with pytest.raises(ConfigError, match="needs alpha"):
            ag.parse_red_id("red.hvt_pref_sp")
        with pytest.raises(ConfigError, match="requires seed"):
            ag.parse_red_id("red.hvt_pref_sp:alpha=0.01,index=3")
        with pytest.raises(ConfigError, match="malformed"):
            ag.parse_red_id("red.hvt_pref_sp:alpha")

    def test_species_members_are_labelled(self):
        members = ag.species_members("hvt_pref_sp", 0.01, 3, seed=5)
        assert [m.policy_id for m in members] == [
            f"red.hvt_pref_sp:alpha=0.01,seed=5,index={i}" for i in range(3)
        ]
        # labels resolve back to the identical parameter vectors
        for member in members:
            assert ag.parse_red_id(member.policy_id).params == member.params
