"""Tree-based risk-aware planner: grow, extract, shorten, validate.

Tree edges are produced by NLP steering between node states; along each edge
the state covariance is propagated by the unscented transform with the means
pinned to the steering states, and every belief must pass the tightened
collision check.  Each edge's covariance starts from zero at its first state
(see the validation contract below), which keeps edges self-contained so
rewiring only has to move costs around.

A plan is the min-cost chain of edges from the root into the goal region,
stored as flat records {k, seg, mean, cov, input}.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import dynamics, geometry, trajopt, unscented
from .dynamics import ModelParams
from .geometry import Environment, RiskBudget
from .trajopt import NlpConfig, SteeringProblem, solve_steering, wrap_angle
from .unscented import Belief, UtParams


@dataclass
class PlannerConfig:
    num_samples: int = 2000
    steer_horizon: int = 30
    max_step_distance: float = 1.5
    neighbor_gamma: float = 4.0
    w_pos: float = 1.0
    w_ang: float = 0.1
    seed: int = 0
    headroom: float = 0.75  # fraction of the input bounds references may use
    steer_R: np.ndarray = field(default_factory=lambda: np.eye(2))

    def __post_init__(self):
        if min(self.num_samples, self.steer_horizon) < 1 or \
           min(self.max_step_distance, self.neighbor_gamma,
               self.w_pos, self.w_ang) <= 0:
            raise ValueError("planner parameters must be positive")
        if not 0.0 < self.headroom <= 1.0:
            raise ValueError("headroom must lie in (0, 1]")

    def steering_model(self, model: ModelParams):
        """Input bounds tightened so tracking keeps control authority."""
        return ModelParams(model.dt, self.headroom * model.v_max,
                           self.headroom * model.omega_max)


@dataclass
class EdgeTrajectory:
    means: np.ndarray   # (N+1, 3), steering states
    covs: np.ndarray    # (N+1, 3, 3), UT covariances from zero
    inputs: np.ndarray  # (N, 2)
    steer_cost: float


@dataclass
class TreeNode:
    id: int
    mean: np.ndarray
    cov: np.ndarray
    parent: int | None
    edge: EdgeTrajectory | None
    cost_from_root: float
    children: list = field(default_factory=list)


class Tree:
    def __init__(self, root_state):
        root = TreeNode(0, np.asarray(root_state, dtype=float), np.zeros((3, 3)),
                        None, None, 0.0)
        self.nodes = [root]

    def add(self, mean, edge: EdgeTrajectory, parent: int):
        node = TreeNode(len(self.nodes), np.asarray(mean, dtype=float),
                        edge.covs[-1].copy(), parent, edge,
                        self.nodes[parent].cost_from_root + edge.steer_cost)
        self.nodes.append(node)
        self.nodes[parent].children.append(node.id)
        return node.id

    def reparent(self, node_id: int, new_parent: int, edge: EdgeTrajectory):
        node = self.nodes[node_id]
        self.nodes[node.parent].children.remove(node_id)
        node.parent = new_parent
        node.edge = edge
        node.cov = edge.covs[-1].copy()
        self.nodes[new_parent].children.append(node_id)
        new_cost = self.nodes[new_parent].cost_from_root + edge.steer_cost
        delta = new_cost - node.cost_from_root
        stack = [node_id]
        while stack:
            nid = stack.pop()
            self.nodes[nid].cost_from_root += delta
            stack.extend(self.nodes[nid].children)

    def chain_to_root(self, node_id: int):
        chain = []
        nid = node_id
        while nid is not None:
            chain.append(nid)
            nid = self.nodes[nid].parent
        return chain[::-1]

    def __len__(self):
        return len(self.nodes)


def metric_distance(a, b, cfg: PlannerConfig):
    """Weighted planar-plus-heading distance used by nearest-node queries."""
    dx, dy = b[0] - a[0], b[1] - a[1]
    dth = wrap_angle(b[2] - a[2])
    return float(np.sqrt(cfg.w_pos * (dx * dx + dy * dy) + cfg.w_ang * dth * dth))


def limit_distance(sample, nearest, cfg: PlannerConfig):
    """Pull an over-distant sample toward the nearest node along the metric."""
    d = metric_distance(nearest, sample, cfg)
    if d <= cfg.max_step_distance:
        return np.asarray(sample, dtype=float)
    t = cfg.max_step_distance / d
    out = np.asarray(nearest, dtype=float).copy()
    out[0] += t * (sample[0] - nearest[0])
    out[1] += t * (sample[1] - nearest[1])
    out[2] = nearest[2] + t * wrap_angle(sample[2] - nearest[2])
    return out


def neighbor_radius(n, cfg: PlannerConfig):
    if n < 2:
        return 0.0
    return float(min(cfg.neighbor_gamma * np.sqrt(np.log(n) / n),
                     cfg.max_step_distance))


def propagate_edge(traj: trajopt.SteeredTrajectory, ut: UtParams,
                   model: ModelParams, w_cov):
    """UT covariances along an edge, means pinned to the steering states."""
    N = traj.inputs.shape[0]
    covs = np.zeros((N + 1, 3, 3))
    for k in range(N):
        b = unscented.propagate(Belief(traj.states[k], covs[k]),
                                traj.inputs[k], ut, model, w_cov)
        covs[k + 1] = b.cov
    return EdgeTrajectory(traj.states.copy(), covs, traj.inputs.copy(), traj.cost)


def edge_is_safe(edge: EdgeTrajectory, env: Environment, budget: RiskBudget,
                 use_dr=True):
    for k in range(edge.means.shape[0]):
        if use_dr:
            if not geometry.dr_point_check(edge.means[k], edge.covs[k], env, budget):
                return False
        elif not geometry.deterministic_point_check(edge.means[k], env):
            return False
    return True


def grow_tree(env: Environment, cfg: PlannerConfig, budget: RiskBudget,
              model: ModelParams, ut: UtParams, w_cov,
              nlp_cfg: NlpConfig = NlpConfig(), use_dr=True):
    """Expand a tree over pre-drawn samples; unsafe or unreachable samples are
    skipped without mutating the tree."""
    if not geometry.dr_point_check(env.start, np.zeros((3, 3)), env, budget):
        raise ValueError("start state fails the tightened collision check")
    rng = np.random.default_rng(cfg.seed)
    box = env.bounds_box_xy()
    samples = np.column_stack([
        rng.uniform(box[0], box[1], cfg.num_samples),
        rng.uniform(box[2], box[3], cfg.num_samples),
        -rng.uniform(-np.pi, np.pi, cfg.num_samples),  # heading in (-pi, pi]
    ])

    tree = Tree(env.start)
    steer_model = cfg.steering_model(model)

    def steer_between(a, b):
        res = solve_steering(SteeringProblem(a, b, cfg.steer_horizon,
                                             cfg.steer_R, steer_model), nlp_cfg)
        if not res.ok:
            return None
        edge = propagate_edge(res, ut, model, w_cov)
        if not edge_is_safe(edge, env, budget, use_dr):
            return None
        return edge

    for s in samples:
        dists = [metric_distance(n.mean, s, cfg) for n in tree.nodes]
        nearest = int(np.argmin(dists))
        target = limit_distance(s, tree.nodes[nearest].mean, cfg)

        edge = steer_between(tree.nodes[nearest].mean, target)
        if edge is None:
            continue

        r = neighbor_radius(len(tree), cfg)
        neighbors = [n.id for n in tree.nodes
                     if np.hypot(n.mean[0] - target[0], n.mean[1] - target[1]) <= r]
        best_parent, best_edge = nearest, edge
        best_cost = tree.nodes[nearest].cost_from_root + edge.steer_cost
        for nid in neighbors:
            if nid == nearest:
                continue
            cand = steer_between(tree.nodes[nid].mean, target)
            if cand is None:
                continue
            cost = tree.nodes[nid].cost_from_root + cand.steer_cost
            if cost < best_cost:
                best_parent, best_edge, best_cost = nid, cand, cost

        new_id = tree.add(target, best_edge, best_parent)

        # rewire neighbors through the new node when strictly cheaper
        for nid in neighbors:
            if nid == best_parent or nid == 0:
                continue
            node = tree.nodes[nid]
            cand = steer_between(tree.nodes[new_id].mean, node.mean)
            if cand is None:
                continue
            new_cost = tree.nodes[new_id].cost_from_root + cand.steer_cost
            if new_cost < node.cost_from_root - 1e-12:
                tree.reparent(nid, new_id, cand)
    return tree


# ---------------------------------------------------------------------------
# Plans
# ---------------------------------------------------------------------------

@dataclass
class Plan:
    """Flat belief/input records plus the segment index of each step."""

    means: np.ndarray   # (T+1, 3)
    covs: np.ndarray    # (T+1, 3, 3)
    inputs: np.ndarray  # (T, 2)
    seg: np.ndarray     # (T+1,) segment id per record

    @property
    def steps(self):
        return self.inputs.shape[0]

    def segments(self):
        """(a, b) record ranges per segment: beliefs a..b, inputs a..b-1.

        A record's seg labels its outgoing input, so the belief at a joint
        belongs to the earlier segment's covariance chain while its index
        starts the next segment's range.
        """
        bounds = np.flatnonzero(np.diff(self.seg)) + 1
        starts = np.concatenate([[0], bounds])
        ends = np.concatenate([bounds, [self.steps]])
        return [(int(a), int(b)) for a, b in zip(starts, ends)]


class GoalUnreached(RuntimeError):
    pass


def edges_to_plan(edges):
    means = [edges[0].means[0]]
    covs = [np.zeros((3, 3))]
    inputs, seg = [], []
    for i, e in enumerate(edges):
        n = e.inputs.shape[0]
        seg.extend([i] * n)
        inputs.extend(e.inputs)
        means.extend(e.means[1:])
        covs.extend(e.covs[1:])
    seg.append(len(edges) - 1)
    return Plan(np.asarray(means), np.asarray(covs), np.asarray(inputs),
                np.asarray(seg, dtype=int))


def extract_plan(tree: Tree, env: Environment):
    """Min-cost chain into the goal region, as a single plan."""
    goal_ids = [n.id for n in tree.nodes if n.id != 0 and env.in_goal(n.mean)]
    if tree.nodes and env.in_goal(tree.nodes[0].mean):
        # degenerate but legal: the root already satisfies the goal
        goal_ids.insert(0, 0)
    if not goal_ids:
        raise GoalUnreached("no tree node reaches the goal region")
    best = min(goal_ids, key=lambda i: tree.nodes[i].cost_from_root)
    if best == 0:
        return Plan(tree.nodes[0].mean[None].copy(), np.zeros((1, 3, 3)),
                    np.zeros((0, 2)), np.zeros(1, dtype=int))
    chain = tree.chain_to_root(best)
    return edges_to_plan([tree.nodes[i].edge for i in chain[1:]])


def shorten_plan(plan: Plan, env: Environment, budget: RiskBudget,
                 cfg: PlannerConfig, model: ModelParams, ut: UtParams, w_cov,
                 nlp_cfg: NlpConfig = NlpConfig(), use_dr=True):
    """Re-steer each segment with the smallest workable horizon.

    The initial guess comes from the distance covered at full speed; the
    horizon grows on steering failure or an unsafe check, and the original
    segment is kept once it reaches the old length.  Once a safe horizon is
    found, a couple of slightly longer ones are also tried and the cheapest
    safe trajectory wins: the time-optimal horizon rides the input bounds,
    which makes a poor tracking reference.
    """
    new_edges = []
    steer_model = cfg.steering_model(model)
    for a, b in plan.segments():
        s0, s1 = plan.means[a], plan.means[b]
        n_orig = b - a
        n = max(1, int(np.ceil(np.linalg.norm(s1[:2] - s0[:2])
                               / (model.v_max * model.dt) - 1e-9)))
        chosen = None
        extra = 0
        while n < n_orig and extra < 3:
            if chosen is not None:
                extra += 1
            res = solve_steering(SteeringProblem(s0, s1, n, cfg.steer_R, steer_model),
                                 nlp_cfg)
            if res.ok:
                edge = propagate_edge(res, ut, model, w_cov)
                if edge_is_safe(edge, env, budget, use_dr) and \
                        (chosen is None or edge.steer_cost < chosen.steer_cost):
                    chosen = edge
            n += 1
        if chosen is None:
            chosen = EdgeTrajectory(
                plan.means[a:b + 1].copy(),
                _chain_covs(plan.means[a:b + 1], plan.inputs[a:b], ut, model, w_cov),
                plan.inputs[a:b].copy(),
                trajopt.steering_cost(plan.inputs[a:b], cfg.steer_R))
        new_edges.append(chosen)
    return edges_to_plan(new_edges)


def _chain_covs(means, inputs, ut, model, w_cov):
    covs = np.zeros((means.shape[0], 3, 3))
    for k in range(inputs.shape[0]):
        covs[k + 1] = unscented.propagate(Belief(means[k], covs[k]),
                                          inputs[k], ut, model, w_cov).cov
    return covs


# ---------------------------------------------------------------------------
# Serialization and validation
# ---------------------------------------------------------------------------

def plan_to_records(plan: Plan):
    recs = []
    T = plan.steps
    for k in range(T + 1):
        recs.append({
            "k": k,
            "seg": int(plan.seg[k]),
            "mean": [float(v) for v in plan.means[k]],
            "cov": [float(v) for v in plan.covs[k].reshape(-1)],
            "input": None if k == T else [float(v) for v in plan.inputs[k]],
        })
    return recs


def plan_from_records(recs):
    T = len(recs) - 1
    means = np.array([r["mean"] for r in recs], dtype=float)
    covs = np.array([np.reshape(r["cov"], (3, 3)) for r in recs], dtype=float)
    inputs = np.array([recs[k]["input"] for k in range(T)], dtype=float).reshape(T, 2)
    seg = np.array([r.get("seg", 0) for r in recs], dtype=int)
    return Plan(means, covs, inputs, seg)


def save_plan(plan: Plan, path):
    with open(path, "w") as f:
        json.dump(plan_to_records(plan), f, indent=1, sort_keys=True)
        f.write("\n")


def load_plan(path):
    with open(path) as f:
        recs = json.load(f)
    if not isinstance(recs, list) or not recs:
        raise ValueError("plan file must be a nonempty JSON list")
    return plan_from_records(recs)


def validate_plan(plan: Plan, env: Environment, budget: RiskBudget,
                  model: ModelParams, ut: UtParams, w_cov,
                  tol_defect=1e-6, use_dr=True):
    """Re-check structure, defects, covariance chaining, inputs, and DR safety.

    Returns a list of violation strings; empty means the plan is valid.
    """
    problems = []
    T = plan.steps
    if plan.seg[0] != 0 or np.any(np.diff(plan.seg) < 0) or np.any(np.diff(plan.seg) > 1):
        problems.append("seg: segment indices must be consecutive and non-decreasing")
        return problems
    if T + 1 > budget.t_max + 1:
        problems.append(f"length: plan has {T} steps, exceeding t_max={budget.t_max}")

    defects = trajopt.trajectory_defects(plan.means, plan.inputs, model) if T else []
    for k, d in enumerate(defects):
        if d > tol_defect:
            problems.append(f"records[{k}]: defect {d:.3e} exceeds {tol_defect:g}")
            break

    lo, hi = model.input_lo, model.input_hi
    if T and (np.any(plan.inputs < lo - 1e-9) or np.any(plan.inputs > hi + 1e-9)):
        k = int(np.argmax(np.any((plan.inputs < lo - 1e-9) |
                                 (plan.inputs > hi + 1e-9), axis=1)))
        problems.append(f"records[{k}].input exceeds the input bounds")

    if np.max(np.abs(plan.covs[0])) > 1e-15:
        problems.append("records[0]: root covariance must be zero")
    for a, b in plan.segments():
        expect = _chain_covs(plan.means[a:b + 1], plan.inputs[a:b], ut, model, w_cov)
        err = np.max(np.abs(expect[1:] - plan.covs[a + 1:b + 1])) if b > a else 0.0
        if err > 1e-9:
            problems.append(f"segment starting at record {a}: covariance chain "
                            f"mismatch {err:.3e}")
            break

    for k in range(T + 1):
        if use_dr:
            ok = geometry.dr_point_check(plan.means[k], plan.covs[k], env, budget)
        else:
            ok = geometry.deterministic_point_check(plan.means[k], env)
        if not ok:
            problems.append(f"records[{k}]: belief fails the collision check")
            break
    return problems
