"""Command-line front end.

    selfsim COMMAND --problem FILE [--out DIR] [--override section.key=value ...]
                    [--jobs N] [--seed S] [--profile CSV] [--check-monotonicity]

Commands: profile-scalar, profile-vector, reduce, lift, evolve, verify, oracle.
Exit codes: 0 ok, 2 validation error, 3 solver failure, 4 check failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
import warnings
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .core import BoundaryPair, Grid, HypothesisError, Profile, SolverError, certify_constants, hull_box
from .problem import (ValidationError, build_boundary, build_diffusivity, build_flux_map, build_network,
                      make_grid, parse_problem)

COMMANDS = ("profile-scalar", "profile-vector", "reduce", "lift", "evolve", "verify", "oracle")
EXIT_OK, EXIT_VALIDATION, EXIT_SOLVER, EXIT_CHECK = 0, 2, 3, 4


# ---------------------------------------------------------------- output helpers

def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, (bool, np.bool_)):
        return bool(x)
    if isinstance(x, (int, np.integer)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        if math.isnan(x):
            return "nan"
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return x
    if x is None or isinstance(x, str):
        return x
    return str(x)


def check(name, value, bound, passed):
    return {"name": name, "value": value, "bound": bound, "pass": bool(passed)}


def write_profile_csv(path, profile: Profile):
    m = profile.m
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["y"] + [f"U_{k + 1}" for k in range(m)] + [f"Q_{k + 1}" for k in range(m)])
        for yi, Ui, Qi in zip(profile.y, profile.U, profile.Q):
            w.writerow([format(float(v), ".17g") for v in (yi, *Ui, *Qi)])


def read_profile_csv(path, boundary: BoundaryPair) -> Profile:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    head, data = rows[0], np.array([[float(v) for v in r] for r in rows[1:]])
    m = (len(head) - 1) // 2
    if head[0] != "y" or len(head) != 2 * m + 1 or m != boundary.m:
        raise ValidationError([f"{path}: header {head} does not match an m={boundary.m} profile"])
    y = data[:, 0]
    n = len(y)
    grid = None
    for L in (-y[0], y[-1]):
        try:
            g = Grid(float(L), n)
        except ValueError:
            continue
        if np.array_equal(g.y, y):
            grid = g
            break
    if grid is None:
        raise ValidationError([f"{path}: y column is not a symmetric uniform grid"])
    return Profile(grid, data[:, 1:1 + m], data[:, 1 + m:], boundary)


def write_columns_csv(path, names, cols):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(names)
        for row in zip(*cols):
            w.writerow([format(float(v), ".17g") for v in row])


# ---------------------------------------------------------------- checks

def scalar_checks(profile: Profile, D) -> list:
    """Checks that depend only on the profile samples and the diffusivity."""
    from .scalar_profile import q0_quadrature_bracket, q0_u0_brackets, verify_gaussian_bounds
    from .vector_profile import integral_relations
    b = profile.boundary
    dlt = b.delta
    out = [check("boundary_mismatch", profile.boundary_mismatch(), 1e-6 * max(1.0, dlt),
                 profile.boundary_mismatch() <= 1e-6 * max(1.0, dlt))]
    gb = verify_gaussian_bounds(profile, D.D_sup)
    out.append(check("gaussian_bound", gb["worst"], 1.02, gb["ok"]))
    U0, Q0 = float(profile.U[profile.grid.mid, 0]), float(profile.Q[profile.grid.mid, 0])
    if D.D_star > 0 and dlt > 0:
        (ua, ub), (qa, qb) = q0_u0_brackets(D.D_star, D.D_sup, b)
        slack = 1e-9 * max(1.0, dlt)
        out.append(check("U0_bracket", U0, [ua, ub], ua - slack <= U0 <= ub + slack))
        out.append(check("Q0_bracket", Q0, [qa, qb], qa - slack <= Q0 <= qb + slack))
        lo, hi = q0_quadrature_bracket(D.D, b, U0)
        out.append(check("Q0_squared_quadrature_bracket", Q0 * Q0, [lo, hi],
                         0.99 * lo <= Q0 * Q0 <= 1.01 * hi))
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            rel = integral_relations(profile, D.antiderivative)
        jump = abs(float(D.antiderivative(b.U_plus)[0] - D.antiderivative(b.U_minus)[0]))
        r0 = float(np.abs(rel.moment0).max()) / dlt
        r1 = float(np.abs(rel.moment1_residual).max()) / max(jump, 1e-300)
        out.append(check("integral_relation_moment0", r0, 1e-5, r0 <= 1e-5))
        out.append(check("integral_relation_moment1", r1, 1e-5, r1 <= 1e-5))
    return out


def vector_checks(profile: Profile, A) -> list:
    from .vector_profile import flux_envelope, integral_relations, verify_weak_residual
    b = profile.boundary
    dlt = b.delta
    consts = certify_constants(A, hull_box(b, pad=0.1))
    out = [check("boundary_mismatch", profile.boundary_mismatch(), 1e-6 * max(1.0, dlt),
                 profile.boundary_mismatch() <= 1e-6 * max(1.0, dlt)),
           check("hypothesis_a_lo_plus_delta", consts.a_lo + consts.delta, 0.0, consts.a_lo + consts.delta > 0)]
    if dlt > 0:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            rel = integral_relations(profile, A)
        jump = float(np.linalg.norm(A.A(b.U_plus) - A.A(b.U_minus)))
        r0 = float(np.abs(rel.moment0).max()) / dlt
        r1 = float(np.abs(rel.moment1_residual).max()) / max(jump, 1e-300)
        out.append(check("integral_relation_moment0", r0, 1e-5, r0 <= 1e-5))
        out.append(check("integral_relation_moment1", r1, 1e-5, r1 <= 1e-5))
        wr = float(verify_weak_residual(profile, A)) / dlt
        out.append(check("weak_residual", wr, 1e-4, wr <= 1e-4))
        if consts.delta > 0:
            fe = flux_envelope(profile, consts.delta)
            out.append(check("flux_envelope", fe, 1.02, fe <= 1.02))
    return out


# ---------------------------------------------------------------- commands

def _scalar_setup(prob):
    boundary = build_boundary(prob)
    if boundary.m != 1:
        raise ValidationError(["[boundary]: scalar problems need one-component limits"])
    return boundary, build_diffusivity(prob, boundary)


def _scalar_solve(prob, boundary, D):
    from .scalar_profile import ScalarSolveConfig, solve_scalar
    kw = {}
    if prob.get("solver", "shoot_tol") is not None:
        kw["shoot_tol"] = prob.get("solver", "shoot_tol")
    L, n = prob.get("grid", "half_width"), prob.get("grid", "n_points")
    if L is not None or n is not None:
        from .core import default_half_width
        kw["grid"] = Grid(float(L if L is not None else default_half_width(D.D_sup)), int(n or 2001))
    return solve_scalar(D, boundary, ScalarSolveConfig(**kw))


def cmd_profile_scalar(prob, args, out):
    boundary, D = _scalar_setup(prob)
    profile, rep = _scalar_solve(prob, boundary, D)
    write_profile_csv(out / "profile.csv", profile)
    solver = {"U0": rep.U0, "Q0": rep.Q0, "y_minus_star": rep.y_minus_star, "y_plus_star": rep.y_plus_star,
              "support": rep.support, "eps_final": rep.eps_final, "diffusivity": D.name,
              "grid": [profile.grid.half_width, profile.grid.n_points]}
    return scalar_checks(profile, D), solver


def _vector_config(prob, args, boundary):
    from .vector_profile import VectorSolveConfig
    kw = {"seed": args.seed}
    for key in ("newton_tol", "newton_max_iter", "init", "box_pad"):
        if prob.get("solver", key) is not None:
            kw[key] = prob.get("solver", key)
    L, n = prob.get("grid", "half_width"), prob.get("grid", "n_points")
    if L is not None:
        kw["grid"] = Grid(float(L), int(n or 2001))
    elif n is not None:
        kw["grid"] = "n_only"
    return kw, n


def _vector_solve(prob, args, A, boundary):
    from .core import default_grid
    from .vector_profile import VectorSolveConfig, solve_vector
    kw, n = _vector_config(prob, args, boundary)
    if kw.get("grid") == "n_only":
        consts = certify_constants(A, hull_box(boundary, pad=kw.get("box_pad", 0.1)))
        kw["grid"] = default_grid(0.0, consts.a_up, int(n))
    return solve_vector(A, boundary, VectorSolveConfig(**kw))


def _vector_setup(prob):
    A, extra = build_flux_map(prob)
    Q = extra["reduction"].Q if "reduction" in extra else None
    boundary = build_boundary(prob, Q)
    return A, extra, boundary


def cmd_profile_vector(prob, args, out):
    A, extra, boundary = _vector_setup(prob)
    profile = _vector_solve(prob, args, A, boundary)
    write_profile_csv(out / "profile.csv", profile)
    f = profile.flags
    solver = {k: f[k] for k in ("eps_final", "regularized", "newton_iterations", "residual", "constants")}
    solver["grid"] = [profile.grid.half_width, profile.grid.n_points]
    solver["flux_map"] = A.name
    return vector_checks(profile, A), solver


def cmd_reduce(prob, args, out):
    from .reduction import build_Q, make_reduction, monotonicity_lemma_check, reduced_flux_map
    net = build_network(prob)
    red = make_reduction(net)
    Q = red.Q
    rng = np.random.default_rng(args.seed)
    C = rng.uniform(0.0, 5.0, (200, net.species))
    U = C @ Q.T
    Psi = red.psi(U)
    id_err = float(np.abs(Psi @ Q.T - U).max() / max(1.0, np.abs(U).max()))
    r_err = float(np.abs(net.R(Psi)).max() / max(1.0, np.abs(U).max()))
    checks = [check("Q_Psi_identity", id_err, 1e-9, id_err <= 1e-9),
              check("R_Psi_vanishes", r_err, 1e-9, r_err <= 1e-9)]
    solver = {"Q": Q, "reduction": red.label, "samples": 200}
    if args.check_monotonicity:
        d = prob.get("network", "d")
        if d is None or net.species != 3 or Q.shape[0] != 2:
            raise ValidationError(["--check-monotonicity needs a three-species network with [network] d"])
        ok = monotonicity_lemma_check(*d)
        consts = certify_constants(reduced_flux_map(net, d, red), [(0.0, 1e4), (0.0, 1e4)])
        msg = "Lemma bound satisfied" if ok else "Lemma bound violated: need (3-sqrt8) d3 < d1, d2 < (3+sqrt8) d3"
        checks.append(check("monotonicity_lemma", [float(x) for x in d],
                            [(3 - math.sqrt(8)) * d[2], (3 + math.sqrt(8)) * d[2]], ok))
        checks.append(check("sampled_a_lo_sign_agrees", consts.a_lo, 0.0, (consts.a_lo > 0) == ok))
        solver["monotonicity"] = msg
    return checks, solver


def cmd_lift(prob, args, out):
    from .reduction import lagrange_multiplier, lift_profile
    A, extra, boundary = _vector_setup(prob)
    if "reduction" not in extra:
        raise ValidationError(["lift needs a reduced flux map ([fluxmap] kind=reduced or a [network] section)"])
    profile = _vector_solve(prob, args, A, boundary)
    write_profile_csv(out / "profile.csv", profile)
    lifted = lift_profile(profile, extra["reduction"])
    lam = lagrange_multiplier(lifted, extra["d"], extra["network"])
    i = lifted.C.shape[1]
    k = lam["lam"].shape[1]
    write_columns_csv(out / "lifted.csv", ["y"] + [f"C_{j + 1}" for j in range(i)] + [f"lambda_{j + 1}" for j in range(k)],
                      [lifted.y] + [lifted.C[:, j] for j in range(i)] + [lam["lam"][:, j] for j in range(k)])
    scale = max(1.0, float(np.abs(lifted.C).max()))
    checks = vector_checks(profile, A) + [
        check("lift_feasible", int(lifted.infeasible_nodes.sum()), 0, lifted.feasible),
        check("lagrange_off_subspace_residual", lam["off_residual"] / scale, 1e-3, lam["off_residual"] / scale <= 1e-3)]
    solver = {"C_minus": lifted.boundary.U_minus, "C_plus": lifted.boundary.U_plus,
              "C_at_0": lifted.C[profile.grid.mid], "reduction": extra["reduction"].label}
    return checks, solver


def _scalar_flux_for(D, prob):
    from .entropy import flux_from_diffusivity, linear_flux, power_flux
    d = prob.sections["diffusivity"]
    if d["name"] == "pme":
        return power_flux(d.get("m", 2.0)), d.get("m", 2.0)
    if d["name"] in ("constant", "linear"):
        return linear_flux(d.get("D", 1.0)), 1.0
    return flux_from_diffusivity(D), None


def cmd_evolve(prob, args, out):
    from .entropy import (EntropyDensity, EvolutionState, decay_rate_fit, discrete_steady_state, evolve,
                          hellinger_constant, perturbed_start, sigma_check)
    boundary, D = _scalar_setup(prob)
    if min(boundary.U_minus[0], boundary.U_plus[0]) <= 0:
        raise ValidationError(["[boundary]: evolve needs positive limits (relative entropy needs U > 0)"])
    profile, _ = _scalar_solve(prob, boundary, D)
    flux, m = _scalar_flux_for(D, prob)
    ev = prob.sections.get("evolution", {})
    grid = make_grid(prob, 10.0, "evolution", 801)
    U0 = np.interp(grid.y, profile.y, profile.U[:, 0])
    Ud = discrete_steady_state(grid, flux, U0)
    ent = ev.get("entropy", "phi_m" if m is not None else "CA")
    if ent == "phi_m":
        phi = EntropyDensity.phi_m(m if m is not None else 1.0)
    elif ent == "CA":
        phi = EntropyDensity.phi_pq(0.5, -1.0)
    else:
        phi = EntropyDensity.E(float(ent[1:]))
    if m is not None:
        sig = sigma_check(profile, ("pme", m))
    else:
        uu = np.linspace(*sorted((boundary.U_minus[0], boundary.U_plus[0])), 2001)
        Dv = np.asarray(D(uu), float)
        sig = sigma_check(profile, ("lipschitz", float(np.abs(np.gradient(Dv, uu)).max()), float(Dv.min())))
    u0 = perturbed_start(Ud, grid.y, ev.get("amplitude", 0.2), 0.0, ev.get("radius", 2.0))
    traj = evolve(EvolutionState(grid, u0, 0.0, boundary), flux, ev.get("tau_end", 6.0), Ud, phi,
                  ev.get("record_dt", 0.05), csv_path=out / "trajectory.csv")
    write_profile_csv(out / "profile.csv", profile)
    t0, t1 = ev.get("fit_from", 1.0), ev.get("fit_to", ev.get("tau_end", 6.0))
    sel = (traj.tau >= t0 - 1e-12) & (traj.tau <= t1 + 1e-12)
    fit = decay_rate_fit(traj.tau[sel], traj.H[sel])
    rise = float(np.max(np.diff(traj.H) / traj.H[:-1]))
    Chat = hellinger_constant(phi)
    hel = float(np.max(traj.hellinger - Chat * traj.H))
    checks = [check("sigma_hypothesis", sig.Sigma, sig.threshold, sig.hypothesis_ok),
              check("entropy_nonincreasing", rise, 0.0, rise <= 1e-12 or not sig.hypothesis_ok),
              check("hellinger_entropy_ordering", hel, 0.0, hel <= 1e-14),
              check("decay_rate", fit.Lambda, sig.Lambda_predicted - 0.02,
                    fit.Lambda >= sig.Lambda_predicted - 0.02 or not sig.hypothesis_ok)]
    solver = {"Lambda_est": fit.Lambda, "fit_residual": fit.residual, "Lambda_predicted": sig.Lambda_predicted,
              "Sigma": sig.Sigma, "sigma_certified_on": sig.certified_on, "entropy": phi.label,
              "records": int(traj.tau.size), "evolution_grid": [grid.half_width, grid.n_points],
              "clipped_steps": traj.flags.get("clipped", 0)}
    return checks, solver


def cmd_verify(prob, args, out):
    path = Path(args.profile) if args.profile else out / "profile.csv"
    if not path.exists():
        raise ValidationError([f"--profile: {path} does not exist"])
    if prob.has("diffusivity"):
        boundary, D = _scalar_setup(prob)
        return scalar_checks(read_profile_csv(path, boundary), D), {"profile": path.name}
    A, extra, boundary = _vector_setup(prob)
    return vector_checks(read_profile_csv(path, boundary), A), {"profile": path.name}


def cmd_oracle(prob, args, out):
    from .scalar_profile import closed_form_oracle, preset_diffusivity
    ex = prob.get("oracle", "example")
    if ex not in ("linear", "degen_I", "degen_II", "degen_III"):
        raise ValidationError([f"[oracle] example: unknown {ex!r} (linear|degen_I|degen_II|degen_III)"])
    tol = prob.get("oracle", "tolerance", 1e-3)
    if ex == "linear":
        dval = prob.get("diffusivity", "D", 1.0)
        b = build_boundary(prob) if prob.has("boundary") else BoundaryPair([0.0], [1.0])
        lo, hi = float(b.U_minus[0]), float(b.U_plus[0])
        D = preset_diffusivity("constant", min(lo, hi), max(lo, hi), D=dval)
    else:
        b = BoundaryPair([-1.0], [1.0])
        D = preset_diffusivity(ex)
    profile, _ = _scalar_solve(prob, b, D)
    if ex == "linear":
        ref = closed_form_oracle("linear", profile.grid, D=dval, U_minus=lo, U_plus=hi)
    else:
        ref = closed_form_oracle(ex, profile.grid)
    write_profile_csv(out / "profile.csv", profile)
    write_profile_csv(out / "oracle.csv", ref)
    err = float(np.abs(profile.U - ref.U).max())
    return [check("oracle_sup_error", err, tol, err <= tol)], {"example": ex}


HANDLERS = {"profile-scalar": cmd_profile_scalar, "profile-vector": cmd_profile_vector, "reduce": cmd_reduce,
            "lift": cmd_lift, "evolve": cmd_evolve, "verify": cmd_verify, "oracle": cmd_oracle}
NEEDS = {"profile-scalar": ("diffusivity", "boundary"), "profile-vector": (("fluxmap", "network"), "boundary"),
         "reduce": ("network",), "lift": (("fluxmap", "network"), "boundary"), "evolve": ("diffusivity", "boundary"),
         "verify": (("diffusivity", "fluxmap", "network"), "boundary"), "oracle": ("oracle",)}


def run(command, problem_path, out_dir, overrides=(), seed=0, profile=None, check_monotonicity=False) -> int:
    """Run one command on one problem; writes report.json (and data files) into ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    args = argparse.Namespace(seed=seed, profile=profile, check_monotonicity=check_monotonicity)
    report = {"command": command, "problem": Path(problem_path).name, "seed": seed, "version": __version__,
              "overrides": list(overrides)}
    code = EXIT_OK
    try:
        prob = parse_problem(problem_path, overrides, NEEDS[command])
        checks, solver = HANDLERS[command](prob, args, out)
        report["checks"], report["solver"] = checks, solver
        passed = all(c["pass"] for c in checks)
        report["status"] = "ok" if passed else "check_failure"
        code = EXIT_OK if passed else EXIT_CHECK
    except ValidationError as exc:
        report["status"] = "validation_error"
        report["error"] = {"category": "validation", "messages": exc.errors}
        code = EXIT_VALIDATION
    except HypothesisError as exc:
        report["status"] = "solver_failure"
        report["error"] = {"category": "hypothesis_violation", "messages": [str(exc)]}
        code = EXIT_SOLVER
    except (SolverError, np.linalg.LinAlgError, FloatingPointError) as exc:
        report["status"] = "solver_failure"
        report["error"] = {"category": "solver_failure", "messages": [str(exc)]}
        code = EXIT_SOLVER
    except ValueError as exc:
        report["status"] = "validation_error"
        report["error"] = {"category": "validation", "messages": [str(exc)]}
        code = EXIT_VALIDATION
    report["exit_code"] = code
    with open(out / "report.json", "w") as fh:
        json.dump(_jsonable(report), fh, indent=2, sort_keys=True, allow_nan=False)
        fh.write("\n")
    return code


def _run_job(job):
    return run(*job)


def build_parser():
    p = argparse.ArgumentParser(prog="selfsim", description="Similarity profiles for diffusion equations and systems.")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--problem", action="append", required=True, help="problem file (repeat for a sweep)")
    p.add_argument("--out", default="out", help="output directory")
    p.add_argument("--override", action="append", default=[], metavar="SECTION.KEY=VALUE")
    p.add_argument("--jobs", type=int, default=1, help="parallel runs across problems")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--profile", default=None, help="profile.csv to re-check (verify)")
    p.add_argument("--check-monotonicity", action="store_true", help="reduce: test the monotonicity region")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_VALIDATION if exc.code else EXIT_OK
    if args.jobs < 1:
        print("--jobs must be >= 1", file=sys.stderr)
        return EXIT_VALIDATION
    out = Path(args.out)
    if len(args.problem) == 1:
        jobs = [(args.command, args.problem[0], out, args.override, args.seed, args.profile, args.check_monotonicity)]
    else:
        jobs = [(args.command, pth, out / Path(pth).stem, args.override, args.seed, args.profile,
                 args.check_monotonicity) for pth in args.problem]
    if args.jobs > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as ex:
            codes = list(ex.map(_run_job, jobs))
    else:
        codes = [_run_job(j) for j in jobs]
    for job, code in zip(jobs, codes):
        print(f"{job[0]} {job[1]}: exit {code} -> {Path(job[2]) / 'report.json'}")
    return max(codes)


if __name__ == "__main__":
    sys.exit(main())
