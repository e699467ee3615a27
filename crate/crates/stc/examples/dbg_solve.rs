use nalgebra::{DMatrix, DVector};
use stc::dataset::{assemble_matrices, build_theta, collect_open_loop, InputLaw, NoiseLaw, NoiseQmi};
use stc::lmi::SolveOptions;
use stc::plant::pendulum_zoh;
use stc::synthesis::build_thm2;
use stc::topology::{build_graph_matrices, Topology};

fn main() {
    let sys = pendulum_zoh(1.0, 1.0, 9.8, 0.02, 0.01).unwrap();
    let traj = collect_open_loop(
        &sys, 80,
        &InputLaw::Uniform { lo: -1.0, hi: 1.0 },
        &NoiseLaw::Ball { bound: 0.01 },
        &DVector::zeros(2), &DVector::zeros(2), 1, 1,
    ).unwrap();
    let dm = assemble_matrices(&traj, 1).unwrap();
    let nq = NoiseQmi::standard(0.01, dm.rho, 2);
    let theta = build_theta(&dm, 1, &nq, &sys.e, 1).unwrap();
    eprintln!("theta amax {:.3e}", theta.theta.amax());
    eprintln!("theta eigs {:?}", theta.theta.symmetric_eigenvalues().as_slice());
    let topo = Topology::ring_with_pinned(6);
    let gm = build_graph_matrices(&topo);
    let prob = build_thm2(&theta, &gm, 0.2, 2.0).unwrap();
    let opts = SolveOptions { verbose: true, ..Default::default() };
    let rep = prob.solve_with(&opts).unwrap();
    eprintln!("status {:?} margin {:.4e} iters {} time {:.2}s",
        rep.status, rep.worst_margin, rep.iterations, rep.solve_time_s);
    let _ = DMatrix::<f64>::zeros(1, 1);
}
