#!/usr/bin/env python3
# A short training run on a 16x16 corpus, then generation and metrics.
# (The full-size run is 64x64 for 500 steps; see the acceptance suite.)

import numpy as np

from sdtgan.data import CorpusConfig, encode_text, sample_batch
from sdtgan.metrics import StubClassifier, StubEmbedder, frechet_distance, inception_score
from sdtgan.models import CondTensors, ModelConfig, count_params, generate
from sdtgan.tensor import Tensor
from sdtgan.train import TrainConfig, train

corpus = CorpusConfig.build(vocab_size=8, F=16, T=16, seed=0)
print("token 3 lives at", corpus.event(3))

model = ModelConfig(F=16, T=16, c_c=16, c_z=8, g_stem_channels=8, g_channels=(8, 8, 8),
                    d_channels=(8, 8, 8), c_g=16, c_embed=16)
cfg = TrainConfig(batch_size=8, total_g_steps=40, checkpoint_interval=20, n_probes=8, model=model)

res = train(cfg, corpus)
for h in res.history:
    print("step", h["step"], "alignment", round(h["alignment_energy"], 4))
print("updates d/g:", res.state.d_steps, res.state.g_steps)
print("params G/D:", count_params(res.state.G), count_params(res.state.D))

# one forward pass per sample
z = np.random.default_rng(1).standard_normal(model.c_z).astype(np.float32)
mel = generate(z, [encode_text([3], model.c_c)], res.state.G).data[0, :, :, 0]
print("generated mel, rounded:\n", mel.round(1))

# stub metrics against held-out real pairs
real = sample_batch(corpus, 64, 123, c_c=model.c_c, c_z=model.c_z)
fake = res.state.G.forward(Tensor(real.noises), CondTensors.from_conds(real.conds)).data
embed = StubEmbedder(16, 16, 32)
print("fd_stub", frechet_distance(embed(real.mels), embed(fake, "generated")))
print("is_stub", inception_score(StubClassifier(16, 16, 8)(fake)))
