"""Match noisy GPS traces back onto a street grid and score the recovered
routes against the generator's ground truth."""

from stkit.evaluate import match_metrics
from stkit.mapmatch import MatchParams, build_road_network, viterbi_match
from stkit.synthetic import generate_synthetic
from stkit.tensorize import build_trajectories

result = generate_synthetic(
    "trajectories",
    {
        "n": 6,                  # 6x6 junction grid
        "n_trajectories": 4,
        "route_segments": 10,
        "points_per_segment": 3,
        "noise_sigma_m": 12.0,   # gaussian GPS scatter
    },
    seed=3,
)
ds, truth = result.dataset, result.truth_routes

network = build_road_network(ds.geo, ds.rel)
lengths = network.segment_lengths()
print(f"network: {len(network.segments)} directed segments")

params = MatchParams(sigma_m=10.0, beta_m=5.0, radius_m=100.0)
trajs = build_trajectories([d for d in ds.dyna if d.dyna_type == "trajectory"])

for traj in trajs:
    res = viterbi_match(network, traj, params)
    matched_route = res.route()
    scores = match_metrics(truth[traj.user_id], matched_route, lengths)
    print(
        f"{traj.user_id}: {len(traj.points)} points -> {len(matched_route)} segments"
        f"  RMF={scores['rmf']:.3f}  AN={scores['an']:.3f}  AL={scores['al']:.3f}"
        f"  breaks={len(res.breaks)}"
    )

# One decoded route in full, against its ground truth.
res = viterbi_match(network, trajs[0], params)
print("\ntruth  :", " ".join(truth[trajs[0].user_id]))
print("matched:", " ".join(res.route()))
