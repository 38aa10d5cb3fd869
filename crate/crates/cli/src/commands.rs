//! One function per subcommand. Each writes its files under the run's
//! output directory and prints a short summary on stdout.

use std::fs;

use adicflow::cocycle::{lyapunov_spectrum, oseledets_split};
use adicflow::cohomology::{
    arc_integral, assemble_trace, dual_setup, obstructions as obstruction_report, transfer_from_trace,
    BirkhoffTrace, CylinderFunction, FlowContext, ObstructionReport,
};
use adicflow::diagram::Diagram;
use adicflow::measures::{pf_measures, FinAddMeasure};
use adicflow::ordering::PathWindow;
use rayon::prelude::*;
use serde_json::{json, Value};

use crate::config::Run;
use crate::Failure;

const VERSION: &str = env!("CARGO_PKG_VERSION");

fn meta(run: &Run) -> Value {
    json!({ "adicflow_version": VERSION, "config_hash": run.hash })
}

fn write(run: &Run, name: &str, contents: &str) -> Result<(), Failure> {
    fs::create_dir_all(&run.out)
        .and_then(|_| fs::write(run.out.join(name), contents))
        .map_err(|e| Failure::Config(format!("out: cannot write {}: {e}", run.out.join(name).display())))
}

fn write_json(run: &Run, name: &str, mut body: Value) -> Result<(), Failure> {
    body["meta"] = meta(run);
    let text = serde_json::to_string_pretty(&body).expect("serializable output");
    write(run, name, &(text + "\n"))
}

fn write_csv(run: &Run, name: &str, table: &str) -> Result<(), Failure> {
    write(run, name, &format!("# adicflow {VERSION} config {}\n{table}", run.hash))
}

fn diagram(run: &Run) -> Result<Diagram, Failure> {
    Ok(run.diagram.to_diagram()?)
}

fn flow_setup(run: &Run) -> Result<(FlowContext, CylinderFunction, PathWindow), Failure> {
    let spec = run.function()?;
    let ctx = FlowContext::new(diagram(run)?)?;
    let f = CylinderFunction::from_spec(&ctx.diagram, &ctx.measure, spec)?;
    let x0 = PathWindow::minimal(&ctx.diagram, 1, ctx.top, run.config.start_vertex - 1)?;
    Ok((ctx, f, x0))
}

fn report(run: &Run, ctx: &FlowContext, f: &CylinderFunction) -> Result<ObstructionReport, Failure> {
    let (field, duals) = dual_setup(ctx, run.config.horizon)?;
    Ok(obstruction_report(ctx, f, &field, &duals)?)
}

/// Grid points are independent arcs, so they are integrated in parallel and
/// merged in grid order; the result does not depend on the thread count.
fn trace(run: &Run, ctx: &FlowContext, f: &CylinderFunction, x0: &PathWindow) -> Result<BirkhoffTrace, Failure> {
    let res = ctx.resolve(f)?;
    let arcs = run
        .grid()
        .par_iter()
        .map(|&t| arc_integral(ctx, f, &res, x0, t))
        .collect::<adicflow::Result<Vec<_>>>()?;
    Ok(assemble_trace(&arcs))
}

pub fn lyapunov(run: &Run) -> Result<(), Failure> {
    let d = diagram(run)?;
    let (lo, hi) = d.window();
    let levels = usize::try_from(hi - lo).unwrap_or(0);
    let s = lyapunov_spectrum(&d, levels)?;
    write_csv(run, "lyapunov.csv", &s.to_csv())?;
    write_json(
        run,
        "lyapunov.json",
        json!({ "start": s.start, "levels": s.levels, "exponents": s.exponents, "errors": s.errors }),
    )?;
    let shown: Vec<String> = s.exponents.iter().map(|x| format!("{x:.7}")).collect();
    println!("theta = [{}]", shown.join(", "));
    Ok(())
}

pub fn split(run: &Run) -> Result<(), Failure> {
    let s = oseledets_split(&diagram(run)?, run.config.split_level, run.config.horizon)?;
    write_json(run, "split.json", json!({ "split": s }))?;
    println!(
        "dim E^u = {}, dim E^cs = {}, defect {:.1e}",
        s.unstable.ncols(),
        s.central_stable.ncols(),
        s.defect
    );
    Ok(())
}

fn family_rows(table: &mut String, m: &FinAddMeasure, side: &str) {
    for (n, v) in m.levels().into_iter().zip(&m.vectors) {
        for (i, x) in v.iter().enumerate() {
            table.push_str(&format!("{side},{n},{},{x:e}\n", i + 1));
        }
    }
}

pub fn measures(run: &Run) -> Result<(), Failure> {
    let m = pf_measures(&diagram(run)?)?;
    let mut table = String::from("side,level,vertex,value\n");
    family_rows(&mut table, &m.plus, "plus");
    family_rows(&mut table, &m.minus, "minus");
    write_csv(run, "measures.csv", &table)?;
    write_json(run, "measures.json", json!({ "plus": m.plus.to_json(), "minus": m.minus.to_json() }))?;
    let rate = |r: Option<f64>| r.map_or("none".to_string(), |x| format!("{x:.7}"));
    println!(
        "decay rates: plus {}, minus {}",
        rate(m.plus.decay_rate),
        rate(m.minus.decay_rate)
    );
    Ok(())
}

pub fn obstructions(run: &Run) -> Result<(), Failure> {
    let (ctx, f, _) = flow_setup(run)?;
    let r = report(run, &ctx, &f)?;
    write_json(run, "obstructions.json", json!({ "report": r }))?;
    println!("{}", r.summary());
    Ok(())
}

pub fn birkhoff(run: &Run) -> Result<(), Failure> {
    let (ctx, f, x0) = flow_setup(run)?;
    let t = trace(run, &ctx, &f, &x0)?;
    let exponent = t
        .exponent
        .ok_or_else(|| Failure::Numerical("too few grid points with a nonzero sup to fit an exponent".into()))?;
    write_csv(run, "birkhoff.csv", &t.to_csv())?;
    write_json(
        run,
        "birkhoff.json",
        json!({ "exponent": exponent, "points": t.points.len(), "t_max": run.config.t_max }),
    )?;
    println!("exponent = {exponent:.4}");
    Ok(())
}

pub fn transfer(run: &Run) -> Result<(), Failure> {
    let (ctx, f, x0) = flow_setup(run)?;
    let r = report(run, &ctx, &f)?;
    let sample = transfer_from_trace(&x0, &trace(run, &ctx, &f, &x0)?, Some(&r));
    write_csv(run, "transfer.csv", &sample.to_csv())?;
    write_json(run, "transfer.json", json!({ "transfer": sample, "verdict": r.verdict }))?;
    if let Some(w) = &sample.warning {
        eprintln!("warning: {w}");
    }
    println!("sup |u| = {:e}", sample.sup_norm);
    Ok(())
}

pub fn validate(run: &Run) -> Result<(), Failure> {
    let mut problems = Vec::new();
    for (i, g) in run.diagram.alphabet.iter().enumerate() {
        if let Err(e) = g.to_graph() {
            problems.push(format!("alphabet[{i}]: {e}"));
        }
    }
    if problems.is_empty() {
        match run.diagram.to_diagram() {
            Ok(d) => {
                if let Some(spec) = &run.config.function {
                    let checked = FlowContext::new(d)
                        .and_then(|ctx| CylinderFunction::from_spec(&ctx.diagram, &ctx.measure, spec).map(|_| ()));
                    if let Err(e) = checked {
                        problems.push(format!("function: {e}"));
                    }
                }
            }
            Err(e) => problems.push(e.to_string()),
        }
    }
    if problems.is_empty() {
        println!("valid (config {})", run.hash);
        Ok(())
    } else {
        Err(Failure::Config(problems.join("\n")))
    }
}
