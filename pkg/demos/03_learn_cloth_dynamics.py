"""
Learning cloth dynamics with a mesh graph network
=================================================

Train the message-passing simulator on a handful of simulated flags and roll it
out on a flag it has not seen.  The same network trains on extracted meshes in the
full pipeline (see ``clods extract`` and ``clods train``).
"""
# %%
from pathlib import Path

import numpy as np

from clods import losses
from clods.dynamics import GnnConfig, rollout, train_gnn
from clods.plot import line_chart
from clods.synth import SimParams, flag_family, simulate_cloth

out = Path(__file__).parent / "out"
base = SimParams(nx=10, ny=10, gust=(0.0, 0.0, 0.0))
train = [simulate_cloth(p) for p in flag_family(8, 21, seed=0, base=base)]
(held_mesh, held), = [simulate_cloth(p) for p in flag_family(1, 32, seed=1, base=base)]
mesh = train[0][0]
print(f"{len(train)} training flags of {len(train[0][1])} frames, {mesh.n_nodes} nodes each")

# %%
cfg = GnnConfig(width=32, blocks=2, epochs=60, lr=3e-3, lr_final=3e-5)
params = train_gnn([t for _, t in train], mesh, cfg)
hist = np.array([(e, loss) for e, loss, _ in params.history])
print(f"node loss: epoch 1 {hist[0, 1]:.2e} -> epoch {int(hist[-1, 0])} {hist[-1, 1]:.2e}")
line_chart(out / "03_training_loss.png", {"node loss": (hist[:, 0], hist[:, 1])},
           title="training", xlabel="epoch", ylabel="loss", logy=True)

# %%
# Roll out from the first two held-out frames; pinned nodes follow their script.
x = held.node_pos
pred = rollout(params, x[0], x[1], held_mesh, len(x) - 2, pinned_script=x[2:]).node_pos
err = losses.per_step_rmse(pred, x[2:]) / held_mesh.diagonal()
still = losses.per_step_rmse(np.repeat(x[1:2], len(x) - 2, 0), x[2:]) / held_mesh.diagonal()
print("rollout RMSE / diagonal:", np.round(err[::5], 4))
print("constant-pose baseline: ", np.round(still[::5], 4))
line_chart(out / "03_rollout_error.png",
           {"learned": (np.arange(len(err)), err), "constant pose": (np.arange(len(err)), still)},
           title="held-out rollout", xlabel="step", ylabel="RMSE / diagonal")
