"""A short joint training run and a comparison with persistence.

Run: python3 demos/05_training.py   (about a minute on one core; set logging to WARNING to silence epochs)
"""
import logging

from stsccl import EncoderConfig, Settings, TrainConfig, fit, synth_traffic
from stsccl.contrastive import ContrastiveConfig
from stsccl.experiments import evaluate_trainer, naive_baselines

logging.basicConfig(level=logging.INFO, format="%(message)s")

series, graph = synth_traffic(12, 10, 30, seed=0)
settings = Settings(model=EncoderConfig(d_model=16, n_heads=2, n_blocks=2, n_decoder_blocks=1),
                    cl=ContrastiveConfig(top_u=4),
                    train=TrainConfig(epsilon=0.5, batch_size=16, lr=1e-3, epochs=30, p=12, k=3))
result = fit(series, graph, settings)
print(f"best epoch {result.best_epoch}, val l_pred {result.best_val:.4f}")

last = result.history[-1]
print(f"last step: l_pred {last.l_pred:.4f}  l_sts_b {last.l_sts_b:.4f}  "
      f"l_sts_s {last.l_sts_s:.4f}  l_sc {last.l_sc:.4f}  total {last.total:.4f}")

result.trainer.load_state(result.best_state)
_, _, test = result.splits
rmse, mae, mape = evaluate_trainer(result.trainer, series, result.scaler, test)
persistence = naive_baselines(series, result.splits, 12, 3)["persistence"]
print(f"test MAE {mae:.4f} (persistence {persistence.mae:.4f})")
