use decoopt_core::planner::MenuRule;

use crate::error::{CliError, CliResult};

fn numbers(body: &str) -> CliResult<Vec<f64>> {
    body.split(',')
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .map_err(|_| CliError::validation(format!("invalid menu: `{t}` is not a number")))
        })
        .collect()
}

/// Parse `exp:tau_min,tau_max`, `list:a,b,c` or `uniform:step,max`.
pub fn parse_menu(cfg: &str) -> CliResult<MenuRule> {
    let (kind, body) = cfg
        .split_once(':')
        .ok_or_else(|| CliError::validation(format!("invalid menu `{cfg}`: expected kind:values")))?;
    let v = numbers(body)?;
    let pair = |name: &str| -> CliResult<(f64, f64)> {
        match v[..] {
            [a, b] => Ok((a, b)),
            _ => Err(CliError::validation(format!("invalid menu: {name} takes exactly two numbers"))),
        }
    };
    let menu = match kind {
        "exp" => {
            let (tau_min, tau_max) = pair("exp")?;
            MenuRule::Exponential { tau_min, tau_max }
        }
        "uniform" => {
            let (step, max) = pair("uniform")?;
            MenuRule::Uniform { step, max }
        }
        "list" => MenuRule::List { values: v },
        other => return Err(CliError::validation(format!("invalid menu kind `{other}`"))),
    };
    menu.menu()?;
    Ok(menu)
}
