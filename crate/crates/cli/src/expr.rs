//! Function targets given as evalexpr expressions in x1..xn.

use std::sync::Arc;

use evalexpr::{
    build_operator_tree, Context, DefaultNumericTypes, EvalexprError, EvalexprResult, Node, Value,
};
use uap_core::{BoxDomain, Target};

use crate::CliError;

type Num = DefaultNumericTypes;

/// Binds x1..xn (and x when n = 1), pi and e; adds short names for the
/// common unary functions on top of the evalexpr builtins.
struct PointContext<'a> {
    x: &'a [Value<Num>],
    pi: Value<Num>,
    e: Value<Num>,
}

impl<'a> PointContext<'a> {
    fn new(x: &'a [Value<Num>]) -> Self {
        PointContext { x, pi: Value::Float(std::f64::consts::PI), e: Value::Float(std::f64::consts::E) }
    }
}

fn unary(name: &str) -> Option<fn(f64) -> f64> {
    Some(match name {
        "sin" => f64::sin,
        "cos" => f64::cos,
        "tan" => f64::tan,
        "exp" => f64::exp,
        "ln" => f64::ln,
        "sqrt" => f64::sqrt,
        "abs" => f64::abs,
        "tanh" => f64::tanh,
        "sinh" => f64::sinh,
        "cosh" => f64::cosh,
        "atan" => f64::atan,
        _ => return None,
    })
}

impl Context for PointContext<'_> {
    type NumericTypes = Num;

    fn get_value(&self, identifier: &str) -> Option<&Value<Num>> {
        match identifier {
            "pi" => Some(&self.pi),
            "e" => Some(&self.e),
            "x" if self.x.len() == 1 => self.x.first(),
            _ => {
                let i: usize = identifier.strip_prefix('x')?.parse().ok()?;
                self.x.get(i.checked_sub(1)?)
            }
        }
    }

    fn call_function(&self, identifier: &str, argument: &Value<Num>) -> EvalexprResult<Value<Num>, Num> {
        match unary(identifier) {
            Some(f) => Ok(Value::Float(f(argument.as_number()?))),
            None => Err(EvalexprError::FunctionIdentifierNotFound(identifier.to_string())),
        }
    }

    fn are_builtin_functions_disabled(&self) -> bool {
        false
    }

    fn set_builtin_functions_disabled(&mut self, _disabled: bool) -> EvalexprResult<(), Num> {
        Err(EvalexprError::CustomMessage("builtin functions cannot be toggled".into()))
    }
}

pub struct ExpressionTarget {
    n: usize,
    sources: Vec<String>,
    nodes: Arc<Vec<Node<Num>>>,
}

impl ExpressionTarget {
    pub fn parse(outputs: &[String], n: usize) -> Result<Self, CliError> {
        if outputs.is_empty() {
            return Err(CliError::Usage("target.outputs: needs at least one expression".into()));
        }
        let nodes = outputs
            .iter()
            .enumerate()
            .map(|(t, src)| {
                build_operator_tree::<Num>(src)
                    .map_err(|e| CliError::Usage(format!("target.outputs[{t}]: cannot parse {src:?}: {e}")))
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(ExpressionTarget { n, sources: outputs.to_vec(), nodes: Arc::new(nodes) })
    }

    fn eval_one(nodes: &[Node<Num>], x: &[f64]) -> Vec<EvalexprResult<f64, Num>> {
        let vals: Vec<Value<Num>> = x.iter().map(|&v| Value::Float(v)).collect();
        let ctx = PointContext::new(&vals);
        nodes.iter().map(|node| node.eval_number_with_context(&ctx)).collect()
    }

    /// Evaluates every output at the box center and corners; any error or
    /// non-finite value is reported against its expression.
    pub fn probe(&self, domain: &BoxDomain) -> Result<(), CliError> {
        let mut points = vec![domain.center()];
        let corners = 1usize << self.n.min(10);
        for mask in 0..corners {
            points.push((0..self.n).map(|i| if mask >> i & 1 == 1 { domain.hi[i] } else { domain.lo[i] }).collect());
        }
        for x in &points {
            for (t, r) in Self::eval_one(&self.nodes, x).into_iter().enumerate() {
                match r {
                    Ok(v) if v.is_finite() => {}
                    Ok(v) => {
                        return Err(CliError::Usage(format!(
                            "target.outputs[{t}]: {:?} is {v} at {x:?}",
                            self.sources[t]
                        )))
                    }
                    Err(e) => {
                        return Err(CliError::Usage(format!(
                            "target.outputs[{t}]: cannot evaluate {:?} at {x:?}: {e}",
                            self.sources[t]
                        )))
                    }
                }
            }
        }
        Ok(())
    }

    pub fn into_target(self) -> Target {
        let nodes = self.nodes;
        let m = nodes.len();
        Target::function(m, move |x: &[f64]| {
            Self::eval_one(&nodes, x).into_iter().map(|r| r.unwrap_or(f64::NAN)).collect()
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn evaluates_variables_constants_and_short_names() {
        let t = ExpressionTarget::parse(&["sin(pi * x1) + x2^2".into(), "abs(x1 - 0.5)".into()], 2).unwrap();
        let f = t.into_target().as_fn();
        let y = f(&[0.5, 3.0]);
        assert!((y[0] - 10.0).abs() < 1e-12);
        assert_eq!(y[1], 0.0);
    }

    #[test]
    fn builtins_and_single_variable_alias() {
        let t = ExpressionTarget::parse(&["math::exp(x) + max(x, 2)".into()], 1).unwrap();
        let f = t.into_target().as_fn();
        assert!((f(&[1.0])[0] - (1f64.exp() + 2.0)).abs() < 1e-12);
    }

    #[test]
    fn integer_results_become_floats() {
        let t = ExpressionTarget::parse(&["3".into()], 1).unwrap();
        assert_eq!(t.into_target().as_fn()(&[0.2]), vec![3.0]);
    }

    #[test]
    fn unknown_variable_fails_the_probe() {
        let t = ExpressionTarget::parse(&["x3 + 1".into()], 2).unwrap();
        let dom = BoxDomain::cube(2, -1.0, 1.0).unwrap();
        assert!(matches!(t.probe(&dom), Err(CliError::Usage(_))));
    }

    #[test]
    fn parse_errors_are_usage_errors() {
        assert!(matches!(ExpressionTarget::parse(&["(x1 +".into()], 1), Err(CliError::Usage(_))));
        assert!(matches!(ExpressionTarget::parse(&[], 1), Err(CliError::Usage(_))));
    }
}
