import numpy as np, time
from turbdiff import *
from turbdiff.turbulence import degrade_item
from turbdiff.training import PairedDataset

t00 = time.time()
N, NH = 512, 32
cfg = DegradationConfig(seed=11)
faces = make_corpus(N + NH, seed=7)
weak = np.empty_like(faces); strong = np.empty_like(faces)
for i in range(N + NH):
    weak[i], strong[i] = degrade_item(faces[i], cfg, i)
ds = PairedDataset(clean=faces[:N, None], weak=weak[:N, None], strong=strong[:N, None])
ho_clean, ho_strong = faces[N:, None], strong[N:, None]
print(f"data built {time.time()-t00:.0f}s; degraded PSNR(holdout) "
      f"{np.mean([psnr(s[0], c[0]) for s, c in zip(ho_strong, ho_clean)]):.2f}")

for lr, bsz, steps in [(2e-4, 8, 800)]:
    t0 = time.time()
    cw = TrainConfig(stage=Stage.WEAK_COND, steps=steps, batch_size=bsz,
                     learning_rate=lr, seed=1)
    stw = train_stage(cw, ds, log_every=200)
    t_weak = time.time() - t0
    first = np.median([h[1] for h in stw.history[:100]])
    last = np.median([h[1] for h in stw.history[-100:]])
    print(f"weak lr={lr} b={bsz} steps={steps}: {t_weak:.0f}s  loss {first:.3f}->{last:.4f}")

    t0 = time.time()
    cs = TrainConfig(stage=Stage.STRONG_DISTILL, steps=steps, batch_size=bsz,
                     learning_rate=lr, seed=2)
    sts = train_stage(cs, ds, init=stw.student, teacher_init=stw.student,
                      log_every=200)
    t_strong = time.time() - t0
    last_s = np.median([h[1] for h in sts.history[-100:]])
    print(f"strong: {t_strong:.0f}s  final noise-loss {last_s:.4f}")

    # restore held-out
    t0 = time.time()
    sched = respace(cs.schedule(), 60)
    fn = make_denoise_fn(sts.student)
    x = to_signed(ho_strong)
    out, trace = restore(x, fn, sched, t1=30, rng=Rng(99))
    rest = to_unit(out)
    pr = [psnr(rest[i, 0], ho_clean[i, 0]) for i in range(NH)]
    pd = [psnr(ho_strong[i, 0], ho_clean[i, 0]) for i in range(NH)]
    imp = np.mean([r > d for r, d in zip(pr, pd)])
    print(f"restore {time.time()-t0:.0f}s nfe={trace.nfe}: degraded {np.mean(pd):.2f} dB "
          f"-> restored {np.mean(pr):.2f} dB; improved {imp*100:.0f}% of items")
print(f"total {time.time()-t00:.0f}s")
