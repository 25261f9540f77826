"""A small graph network that reads the tactile skin.

Each of the 48 taxels is a node; neighbours within an array are linked,
and so are matching positions on the other arrays. Three graph-convolution
layers feed a mean-pooled logistic readout with one probability per frame.
"""

import time

from finray.slipnet import build_graph, evaluate, generate_dataset, grad_check, init_params, train
from finray.tactile import TraceSpec

g = build_graph(generate_dataset(TraceSpec(), 10, 10, seed=0)[0].features[0])
print(f"graph: {g.node_count} nodes, {g.edge_count} directed edges")

err = grad_check(init_params(seed=1, zero_readout=False), g, 1)
print(f"hand-written backward pass vs finite differences: max relative error {err:.1e}")

tr, te = generate_dataset(TraceSpec(), 2100, 700, seed=0)
print(f"\n{len(tr)} training and {len(te)} test frames, {tr.labels.mean():.0%} labelled as holding")
t0 = time.perf_counter()
out = train(tr)
h = out["loss_history"]
print(f"trained {len(h)} epochs in {time.perf_counter() - t0:.1f} s, loss {h[0]:.3f} -> {h[-1]:.3f}")

ev = evaluate(out["params"], te)
print(f"test accuracy {ev['accuracy']:.3f}")
print("confusion (rows true, columns predicted):")
print(ev["confusion"])
