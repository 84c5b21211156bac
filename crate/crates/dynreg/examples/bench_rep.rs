use dynreg::simulate::{gen_dataset, study_configs, SimSpec};
use dynreg::fit::fit_path;
use std::time::Instant;

fn main() {
    let spec = SimSpec::new(1, 50, 5, 2, 42);
    let t0 = Instant::now();
    let data = gen_dataset(&spec, 0).unwrap();
    println!("gen: {:?}", t0.elapsed());
    let (dyn_cfg, cls_cfg) = study_configs(&spec).unwrap();

    let t1 = Instant::now();
    let fits = fit_path(&data.x_train, &data.y_train, &dyn_cfg).unwrap();
    println!("dynamic fit path ({} lambdas): {:?}", fits.len(), t1.elapsed());
    let iters: Vec<usize> = fits.iter().map(|f| f.objective_trace.len()).collect();
    println!("outer iterations per lambda: {:?}", iters);
    println!("converged: {:?}", fits.iter().map(|f| f.converged).collect::<Vec<_>>());

    let t2 = Instant::now();
    let cls = fit_path(&data.x_train, &data.y_train, &cls_cfg).unwrap();
    println!("classical fit path: {:?}", t2.elapsed());

    let t3 = Instant::now();
    let i = dynreg::simulate::ise(|s, t| fits[8].beta_at(s, t), |s, t| Ok(dynreg::simulate::true_beta(s, t))).unwrap();
    println!("one ISE: {:?} (value {:.4})", t3.elapsed(), i);

    let t4 = Instant::now();
    let m = dynreg::simulate::mspe(&fits[8], &data.x_test, &data.y_test).unwrap();
    println!("one MSPE (200 curves): {:?} (value {:.6})", t4.elapsed(), m);
    let m2 = dynreg::simulate::mspe(&cls[8], &data.x_test, &data.y_test).unwrap();
    println!("classical MSPE at same lambda: {:.6}", m2);
    println!("dyn ISE at aicc-ish lambda: {:.4}", i);
}
