use std::fmt::Write as _;
use std::io::Write;

use super::{RunResult, Sample};

/// `t,x1,x2,xd1,xd2,e1,e2,u1,u2,theta_norm`, one row per step, full
/// precision.
pub fn write_trajectory_csv(samples: &[Sample], mut w: impl Write) -> std::io::Result<()> {
    writeln!(w, "t,x1,x2,xd1,xd2,e1,e2,u1,u2,theta_norm")?;
    for s in samples {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{}",
            s.t, s.x[0], s.x[1], s.xd[0], s.xd[1], s.e[0], s.e[1], s.u[0], s.u[1], s.theta_norm
        )?;
    }
    Ok(())
}

/// Plain-text run summary laid out like one row of the comparison table.
pub fn summary_text(r: &RunResult) -> String {
    let s = &r.scenario;
    let mut out = String::new();
    let _ = writeln!(out, "scenario        {}", s.name);
    let _ = writeln!(out, "seed            {}", s.sim.seed);
    let _ = writeln!(
        out,
        "solver          RK4, dt = {}, t_end = {}, adaptation {:?}, {:?}",
        s.sim.dt, s.sim.t_end, s.controller.scheme, s.sim.ordering
    );
    let _ = writeln!(out, "weights         {}", r.weight_count);
    let _ = writeln!(out);
    let _ = writeln!(out, "{:<16}{:>12}{:>12}", "window", "eps1", "eps2");
    let t_last = r.samples.last().map_or(0.0, |x| x.t);
    let _ = writeln!(
        out,
        "{:<16}{:>12.4}{:>12.4}",
        format!("[0, {}]", t_last),
        r.rmse.0,
        r.rmse.1
    );
    if let (Some((a, b)), Some(tg)) = (r.post_change_rmse, s.plant.disturbance_onset) {
        let _ = writeln!(
            out,
            "{:<16}{:>12.4}{:>12.4}",
            format!("[{}, {}]", tg, t_last),
            a,
            b
        );
        let _ = writeln!(out, "post-change RMSE over [{tg}, {t_last}]: eps1 = {a:.6}, eps2 = {b:.6}");
    }
    let _ = writeln!(out);
    let _ = writeln!(out, "max |theta|     {:.6} (theta_bar = {})", r.max_theta_norm, s.controller.theta_bar);
    let _ = writeln!(out, "max |Phi'|      {:.6}", r.jacobian_norm_max);
    let _ = writeln!(out, "certificate     {}", r.certificate);
    out
}
