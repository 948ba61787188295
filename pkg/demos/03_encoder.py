"""Encoder and decoder shapes, plus the per-sample dynamic graph.

Run: python3 demos/03_encoder.py
"""
import torch

from stsccl import Decoder, EncoderConfig, STSCMEncoder, gumbel_softmax, probsparse_attention, synth_traffic

torch.manual_seed(0)
_, graph = synth_traffic(12, 10, 30, seed=0)
cfg = EncoderConfig(d_in=1, d_model=16, n_heads=2, n_blocks=2, n_decoder_blocks=1)
encoder = STSCMEncoder(cfg).double().eval()
decoder = Decoder(cfg, horizon=3).double().eval()

a_con = torch.tensor(graph.a_con, dtype=torch.float64)
coords = torch.tensor(graph.coords, dtype=torch.float64)
view = torch.randn(4, 12, 12, 1, dtype=torch.float64)
out = encoder(view, a_con, coords, a_con)
print("z_seq", tuple(out.z_seq.shape), "c_vec", tuple(out.c_vec.shape), "a_dyn", tuple(out.a_dyn.shape))
print("forecast", tuple(decoder(out).shape))

# Every sample gets its own dynamic graph, so a forecast never depends on
# what else shares its batch.
alone = encoder(view[:1], a_con, coords, a_con)
print("sample 0 unchanged when encoded alone:", torch.allclose(alone.a_dyn[0], out.a_dyn[0]))

# Hard Gumbel-Softmax samples follow softmax(logits).
logits = torch.tensor([[1.0, 0.0, -1.0]]).expand(20000, 3)
draws = gumbel_softmax(logits, temperature=0.5, hard=True, seed=0, noise=True)
print("empirical", draws.mean(0).numpy().round(3), "target", torch.softmax(logits[0], 0).numpy().round(3))

# ProbSparse attention keeps only the most informative queries.
q = k = v = torch.randn(1, 64, 8, dtype=torch.float64)
sparse = probsparse_attention(q, k, v, factor=5.0, seed=0)
print("probsparse output", tuple(sparse.shape))
