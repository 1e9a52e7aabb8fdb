import json
import numpy as np
from sklearn.cluster import HDBSCAN
from sklearn.metrics import adjusted_rand_score, silhouette_score

out = {"hdbscan": [], "ari": [], "silhouette": []}
for seed in range(10):
    rng = np.random.default_rng(1000 + seed)
    dim = 2 if seed % 2 == 0 else 32
    k = 2 + seed % 4
    centers = rng.normal(0, 6.0, size=(k, dim))
    pts = []
    for c in range(k):
        m = int(rng.integers(15, 40))
        pts.append(centers[c] + rng.normal(0, 1.0, size=(m, dim)))
    pts.append(rng.uniform(-15, 15, size=(int(rng.integers(3, 10)), dim)))
    X = np.vstack(pts)
    X = X.astype(np.float32).astype(np.float64)
    mcs = [5, 8, 10][seed % 3]
    labels = HDBSCAN(min_cluster_size=mcs, algorithm="kd_tree" if dim == 2 else "ball_tree",
                     cluster_selection_epsilon=0.0).fit(X).labels_
    out["hdbscan"].append({"seed": seed, "min_cluster_size": mcs, "epsilon": 0.0,
                           "allow_single_cluster": False,
                           "points": X.tolist(), "labels": labels.tolist()})
# epsilon and single-cluster variants
for seed in range(10, 14):
    rng = np.random.default_rng(1000 + seed)
    X = np.vstack([rng.normal(0, 1, (25, 2)), rng.normal(3, 1, (25, 2)), rng.normal([12, 0], 1, (30, 2))])
    X = X.astype(np.float32).astype(np.float64)
    eps = [0.5, 1.0, 2.5, 0.0][seed - 10]
    single = seed % 2 == 1
    labels = HDBSCAN(min_cluster_size=5, algorithm="kd_tree", cluster_selection_epsilon=eps,
                     allow_single_cluster=single).fit(X).labels_
    out["hdbscan"].append({"seed": seed, "min_cluster_size": 5, "epsilon": eps,
                           "allow_single_cluster": single,
                           "points": X.tolist(), "labels": labels.tolist()})
# duplicates
X = np.ones((12, 3))
for single in [True, False]:
    labels = HDBSCAN(min_cluster_size=5, algorithm="kd_tree", allow_single_cluster=single).fit(X).labels_
    out["hdbscan"].append({"seed": -1, "min_cluster_size": 5, "epsilon": 0.0,
                           "allow_single_cluster": single, "points": X.tolist(), "labels": labels.tolist()})
for seed in range(5):
    rng = np.random.default_rng(seed)
    a = rng.integers(0, 4, 50); b = rng.integers(0, 3, 50)
    out["ari"].append({"a": a.tolist(), "b": b.tolist(), "value": adjusted_rand_score(a, b)})
out["ari"].append({"a": [0, 0, 1, 1], "b": [0, 0, 0, 1], "value": adjusted_rand_score([0, 0, 1, 1], [0, 0, 0, 1])})
for seed in range(5):
    rng = np.random.default_rng(50 + seed)
    X = rng.normal(size=(30, 5)); lab = rng.integers(0, 3, 30)
    lab[:3] = [0, 1, 2]
    out["silhouette"].append({"points": X.tolist(), "labels": lab.tolist(),
                              "value": float(silhouette_score(X, lab))})
json.dump(out, open("sklearn_reference.json", "w"))
for h in out["hdbscan"]:
    print(h["seed"], h["min_cluster_size"], h["epsilon"], h["allow_single_cluster"], sorted(set(h["labels"])), sum(1 for l in h["labels"] if l < 0))
print([a["value"] for a in out["ari"]])
