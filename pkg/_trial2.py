import numpy as np, time
from turbdiff import *
from turbdiff.turbulence import degrade_item
from turbdiff.training import PairedDataset

N, NH = 512, 32
cfg = DegradationConfig(seed=11)
faces = make_corpus(N + NH, seed=7)
weak = np.empty_like(faces); strong = np.empty_like(faces)
for i in range(N + NH):
    weak[i], strong[i] = degrade_item(faces[i], cfg, i)
ds = PairedDataset(clean=faces[:N, None], weak=weak[:N, None], strong=strong[:N, None])
ho_clean, ho_strong = faces[N:, None], strong[N:, None]
pd_base = np.mean([psnr(ho_strong[i,0], ho_clean[i,0]) for i in range(NH)])

cw = TrainConfig(stage=Stage.WEAK_COND, steps=800, batch_size=8, learning_rate=2e-4, seed=1)
stw = train_stage(cw, ds)
cs = TrainConfig(stage=Stage.STRONG_DISTILL, steps=800, batch_size=8, learning_rate=2e-4, seed=2)
sts = train_stage(cs, ds, init=stw.student, teacher_init=stw.student)
fn = make_denoise_fn(sts.student)
sched_full = cs.schedule()
K = 60
sched = respace(sched_full, K)
x = to_signed(ho_strong)

# one-shot x0-hat from noised INPUT at respaced step k: quality of eps model
rng = Rng(5)
print(f"degraded PSNR {pd_base:.2f}")
for k in (5, 10, 20, 30, 45, 60):
    eps = rng.gauss(x.shape)
    y = q_sample(x, k, eps, sched)
    ab = sched.alpha_bar_prime[k-1]
    eh = fn(y, x, int(sched.steps[k-1]))
    x0 = (y - np.sqrt(1-ab)*eh)/np.sqrt(ab)
    r = to_unit(x0)
    pr = np.mean([psnr(r[i,0], ho_clean[i,0]) for i in range(NH)])
    print(f"one-shot k={k:2d} (t={sched.steps[k-1]:3d}, abar={ab:.3f}): PSNR {pr:.2f}")

# full ancestral from each t1
for t1 in (5, 10, 20, 30):
    out, tr = restore(x, fn, sched, t1=t1, rng=Rng(99))
    r = to_unit(out)
    pr = [psnr(r[i,0], ho_clean[i,0]) for i in range(NH)]
    imp = np.mean([p > psnr(ho_strong[i,0], ho_clean[i,0]) for i,p in enumerate(pr)])
    d = np.mean((r - ho_strong)**2)
    print(f"ancestral t1={t1:2d}: PSNR {np.mean(pr):.2f}, improved {imp*100:.0f}%, dist {d:.5f}")

# same but finer respacing K=250 (diagnostic only)
s250 = respace(sched_full, 250)
for t1 in (125,):
    out, tr = restore(x, fn, s250, t1=t1, rng=Rng(99))
    r = to_unit(out)
    pr = np.mean([psnr(r[i,0], ho_clean[i,0]) for i in range(NH)])
    print(f"ancestral K=250 t1={t1}: PSNR {pr:.2f} (nfe {tr.nfe})")
EOF_MARKER = None
