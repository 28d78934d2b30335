import numpy as np, time
from turbdiff import *
from turbdiff.turbulence import degrade_item
from turbdiff.training import PairedDataset

t00 = time.time()
N, NH = 2048, 128
cfg = DegradationConfig(seed=11)
faces = make_corpus(N + NH, seed=7)
weak = np.empty_like(faces); strong = np.empty_like(faces)
for i in range(N + NH):
    weak[i], strong[i] = degrade_item(faces[i], cfg, i)
ds = PairedDataset(clean=faces[:N, None], weak=weak[:N, None], strong=strong[:N, None])
ho_clean, ho_strong = faces[N:, None], strong[N:, None]
pd = [psnr(ho_strong[i, 0], ho_clean[i, 0]) for i in range(NH)]
print(f"data {time.time()-t00:.0f}s; degraded PSNR {np.mean(pd):.2f}")

LR, B, SW, SS = 3e-4, 8, 2500, 2500
t0 = time.time()
cw = TrainConfig(stage=Stage.WEAK_COND, steps=SW, batch_size=B, learning_rate=LR, seed=1)
stw = train_stage(cw, ds, log_every=500)
print(f"weak {time.time()-t0:.0f}s last100 {np.median([h[1] for h in stw.history[-100:]]):.4f}")
t0 = time.time()
cs = TrainConfig(stage=Stage.STRONG_DISTILL, steps=SS, batch_size=B, learning_rate=LR, seed=2)
sts = train_stage(cs, ds, init=stw.student, teacher_init=stw.student, log_every=500)
print(f"strong {time.time()-t0:.0f}s last100 {np.median([h[1] for h in sts.history[-100:]]):.4f}")

sched = respace(cs.schedule(), 60)
fn = make_denoise_fn(sts.student)
x = to_signed(ho_strong)
rng = Rng(5)
for k in (5, 10, 30):
    eps = rng.gauss(x.shape)
    y = q_sample(x, k, eps, sched)
    ab = sched.alpha_bar_prime[k-1]
    eh = fn(y, x, int(sched.steps[k-1]))
    r = to_unit((y - np.sqrt(1-ab)*eh)/np.sqrt(ab))
    print(f"one-shot k={k}: PSNR {np.mean([psnr(r[i,0], ho_clean[i,0]) for i in range(NH)]):.2f}")
for t1 in (10, 20, 30, 45, 60):
    t0 = time.time()
    out, tr = restore_batched(x, fn, sched, t1=t1, rng=Rng(99), batch_size=64)
    r = to_unit(out)
    pr = [psnr(r[i,0], ho_clean[i,0]) for i in range(NH)]
    imp = np.mean([p > d for p, d in zip(pr, pd)])
    dist = np.mean((r - ho_strong)**2)
    print(f"ancestral t1={t1:2d}: PSNR {np.mean(pr):.2f} improved {imp*100:.0f}% "
          f"dist {dist:.5f} ({time.time()-t0:.0f}s)")
print(f"total {time.time()-t00:.0f}s")
