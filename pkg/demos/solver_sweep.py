"""
Krylov x preconditioner sweep at desk scale
===========================================

Same experiment as ``bench solvers`` but driven from Python and printed as a
table. Non-converged runs stay in the table.
"""
from batchfem.bench import cmd_solvers, load_config

cfg = load_config(meshes=[8, 16, 32], max_iter=4000)
records = cmd_solvers(cfg)

print(f"{'dof':>6} {'method':<9} {'pc':<7} {'conv':<5} {'iters':>6} {'time [ms]':>10} {'rres':>9}")
for r in records:
    print(f"{r.dof:>6} {r.method:<9} {r.pc:<7} {str(r.converged):<5} {r.iters:>6} "
          f"{1e3 * r.time_s:>10.2f} {r.final_rres:>9.1e}")
