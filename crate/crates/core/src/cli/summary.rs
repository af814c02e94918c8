use std::fmt::Write;

use super::artifacts::{FitArtifact, FixedEffect};
use crate::inference::VarCorrReport;

/// `d.dde-XX` with a two-digit signed exponent.
pub fn sci(x: f64, digits: usize) -> String {
    let s = format!("{x:.digits$e}");
    match s.split_once('e') {
        Some((mant, exp)) => {
            let e: i32 = exp.parse().unwrap_or(0);
            let sign = if e < 0 { '-' } else { '+' };
            format!("{mant}e{sign}{:02}", e.abs())
        }
        None => s,
    }
}

pub fn format_p(p: Option<f64>) -> String {
    match p {
        None => "NA".into(),
        Some(p) if p < 2e-16 => "< 2e-16".into(),
        Some(p) if p < 1e-4 => sci(p, 2),
        Some(p) => format!("{p:.5}"),
    }
}

pub fn signif_stars(p: Option<f64>) -> &'static str {
    match p {
        Some(p) if p < 0.001 => "***",
        Some(p) if p < 0.01 => "**",
        Some(p) if p < 0.05 => "*",
        Some(p) if p < 0.1 => ".",
        _ => "",
    }
}

fn fixed(x: Option<f64>, digits: usize) -> String {
    match x {
        Some(v) => format!("{v:.digits$}"),
        None => "NA".into(),
    }
}

fn one_decimal(x: Option<f64>) -> String {
    fixed(x, 1)
}

fn right(cells: &[String], widths: &[usize]) -> String {
    cells
        .iter()
        .zip(widths)
        .map(|(c, w)| format!("{c:>w$}"))
        .collect::<Vec<_>>()
        .join(" ")
}

fn random_effects(out: &mut String, vc: &VarCorrReport) {
    struct Row {
        group: String,
        name: String,
        var: String,
        sd: String,
        corr: Vec<String>,
    }
    let mut rows = Vec::new();
    for t in &vc.terms {
        for (i, name) in t.names.iter().enumerate() {
            let sd = t.sd[i];
            rows.push(Row {
                group: if i == 0 { t.group.clone() } else { String::new() },
                name: name.clone(),
                var: format!("{:.4}", sd * sd),
                sd: format!("{sd:.4}"),
                corr: (0..i).map(|j| format!("{:5.2}", t.corr[i][j])).collect(),
            });
        }
    }
    if let Some(s) = vc.residual_sd {
        rows.push(Row {
            group: "Residual".into(),
            name: String::new(),
            var: format!("{:.4}", s * s),
            sd: format!("{s:.4}"),
            corr: Vec::new(),
        });
    }
    let gw = rows.iter().map(|r| r.group.len()).max().unwrap_or(0).max("Groups".len());
    let nw = rows.iter().map(|r| r.name.len()).max().unwrap_or(0).max("Name".len());
    let vw = rows.iter().map(|r| r.var.len()).max().unwrap_or(0).max("Variance".len());
    let sw = rows.iter().map(|r| r.sd.len()).max().unwrap_or(0).max("Std.Dev.".len());
    let has_corr = rows.iter().any(|r| !r.corr.is_empty());
    let mut header = format!(" {:<gw$} {:<nw$} {:<vw$} {:<sw$}", "Groups", "Name", "Variance", "Std.Dev.");
    if has_corr {
        header.push_str(" Corr");
    }
    let _ = writeln!(out, "{}", header.trim_end());
    for r in rows {
        let line = format!(
            " {:<gw$} {:<nw$} {:<vw$} {:<sw$} {}",
            r.group,
            r.name,
            r.var,
            r.sd,
            r.corr.join(" ")
        );
        let _ = writeln!(out, "{}", line.trim_end());
    }
}

fn fixed_effects(out: &mut String, fx: &[FixedEffect]) {
    let names: Vec<&str> = fx.iter().map(|f| f.name.as_str()).collect();
    let cells: Vec<[String; 4]> = fx
        .iter()
        .map(|f| {
            [
                format!("{:.5}", f.estimate),
                fixed(f.std_error, 5),
                fixed(f.z_value, 3),
                format_p(f.p_value),
            ]
        })
        .collect();
    let heads = ["Estimate", "Std. Error", "z value", "Pr(>|z|)"].map(String::from);
    let mut widths: Vec<usize> = heads.iter().map(|h| h.len()).collect();
    for c in &cells {
        for (w, s) in widths.iter_mut().zip(c) {
            *w = (*w).max(s.len());
        }
    }
    let lw = names.iter().map(|n| n.len()).max().unwrap_or(0);
    let _ = writeln!(out, "{:lw$} {}", "", right(&heads, &widths));
    for ((name, c), f) in names.iter().zip(&cells).zip(fx) {
        let line = format!("{name:<lw$} {} {}", right(c, &widths), signif_stars(f.p_value));
        let _ = writeln!(out, "{}", line.trim_end());
    }
    let _ = writeln!(out, "---");
    let _ = writeln!(
        out,
        "Signif. codes:  0 '***' 0.001 '**' 0.01 '*' 0.05 '.' 0.1 ' ' 1"
    );
}

/// Text summary of a fit: family, formula, information criteria, random
/// effect variances and correlations, and the fixed-effect table.
pub fn format_summary(fit: &FitArtifact, vc: &VarCorrReport) -> String {
    let mut out = String::new();
    let _ = writeln!(out, " Family: {}  ( {} )", fit.family, fit.link);
    let _ = writeln!(out, "Formula:          {}", fit.config.formula);
    let _ = writeln!(out, "Data: {}", fit.config.data);
    let _ = writeln!(out);
    let heads = ["AIC", "BIC", "logLik", "deviance", "df.resid"].map(String::from);
    let vals = [
        one_decimal(fit.aic),
        one_decimal(fit.bic),
        one_decimal(fit.loglik),
        one_decimal(fit.deviance),
        fit.df_resid.to_string(),
    ];
    let widths: Vec<usize> = heads.iter().zip(&vals).map(|(h, v)| h.len().max(v.len()).max(8)).collect();
    let _ = writeln!(out, "{}", right(&heads, &widths));
    let _ = writeln!(out, "{}", right(&vals, &widths));
    let _ = writeln!(out);
    if !vc.terms.is_empty() || vc.residual_sd.is_some() {
        let _ = writeln!(out, "Random effects:");
        let _ = writeln!(out);
        let _ = writeln!(out, "Conditional model:");
        random_effects(&mut out, vc);
    }
    let groups: Vec<String> = fit.groups.iter().map(|g| format!("{}, {}", g.group, g.levels)).collect();
    if groups.is_empty() {
        let _ = writeln!(out, "Number of obs: {}", fit.n_obs);
    } else {
        let _ = writeln!(out, "Number of obs: {}, groups:  {}", fit.n_obs, groups.join("; "));
    }
    let _ = writeln!(out);
    let _ = writeln!(out, "Conditional model:");
    fixed_effects(&mut out, &fit.fixed_effects);
    if !fit.convergence.converged {
        let _ = writeln!(out);
        let _ = writeln!(out, "Model failed to converge: {}", fit.convergence.message);
    }
    if !fit.convergence.information_positive_definite {
        let _ = writeln!(out, "Observed information is not positive definite; standard errors are approximate");
    }
    out
}
