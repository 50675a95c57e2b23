# diag_pipeline.py — end-to-end check: rotor -> tiny model -> state -> short trajectory -> histogram
import logging, os, sys

from src.analysis.trajectory import autocorrelation, histogram
from src.dynamics.bohm import integrate
from src.dynamics.pure_state import make_state, population_diagnostics
from src.dynamics.reduced import equilibrium_rdm, marginal
from src.physics.many_body import build_model, polyad_census, select_active_space
from src.physics.random_potential import build_model_potentials
from src.physics.single_rotor import solve_rotor
from src.service.config import Settings

logging.basicConfig(level=getattr(logging, Settings.from_env().log_level, logging.INFO),
                    format="[%(module)-12s] %(message)s")

ROOT = os.path.dirname(os.path.abspath(__file__))
print("ROOT:", ROOT)

# 0) 单转子谱（u=300）
rotor = solve_rotor(300.0, 20, 10)
print("eps_0..3:", ", ".join(f"{e:.3f}" for e in rotor.energies[:4]))

# 1) 两个转子的小模型（命令行参数可改 E_tr）
E_tr = float(sys.argv[1]) if len(sys.argv) > 1 else 80.0
pots = build_model_potentials(2, L=20, sigma_V=1.0, master_seed=7)
spectrum = build_model(2, rotor, pots, E_tr=E_tr)
print("basis dimension:", spectrum.dim, "| polyad census:", polyad_census(spectrum.basis).tolist())
print("min gap:", f"{spectrum.min_gap:.3e}", "| distinct:", spectrum.distinct)

# 2) RPSE 态
E_max = 0.5 * (spectrum.energies[2] + spectrum.energies[3])
active = select_active_space(spectrum, E_max)
state = make_state(spectrum, active, seed=11)
print("active N:", active.N, "| diagnostics:", population_diagnostics(state))

# 3) 短轨迹
traj = integrate(state, None, tau_end=2.0, step=0.01)
print("samples:", len(traj), "| last Q:", traj.positions[-1].round(4).tolist())
print("min |Psi|^2:", f"{traj.diagnostics['min_density']:.3e}", "| halvings:", traj.diagnostics["substep_events"])

# 4) 直方图 + G(tau) + 平衡边缘分布
hist = histogram(traj, 0, bins=200)
curve = autocorrelation(traj, 0, max_lag=0.5)
p_eq = marginal(equilibrium_rdm(state, 0), rotor, hist.centers)
print("histogram samples:", hist.samples, "| half-record distance:", f"{hist.half_distance:.4f}")
print("G(0):", f"{curve.G0:.4e}", "| tau_c:", curve.correlation_time)
print("p_eq normalization:", f"{p_eq.normalization():.10f}")
