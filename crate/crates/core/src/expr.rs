//! Small arithmetic expressions over named real variables, used for kernel
//! and reward specifications in configuration files.

use std::fmt;

use meval::{ContextProvider, FuncEvalError};

use crate::error::{Error, Result};

/// A parsed expression with a fixed, ordered variable list.
#[derive(Clone)]
pub struct ScalarExpr {
    source: String,
    expr: meval::Expr,
    vars: &'static [&'static str],
}

impl fmt::Debug for ScalarExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ScalarExpr")
            .field("source", &self.source)
            .field("vars", &self.vars)
            .finish()
    }
}

struct Bindings<'a> {
    names: &'a [&'a str],
    values: &'a [f64],
}

impl ContextProvider for Bindings<'_> {
    fn get_var(&self, name: &str) -> Option<f64> {
        match name {
            "pi" => Some(std::f64::consts::PI),
            "e" => Some(std::f64::consts::E),
            _ => self.names.iter().position(|n| *n == name).map(|p| self.values[p]),
        }
    }

    fn eval_func(&self, name: &str, args: &[f64]) -> std::result::Result<f64, FuncEvalError> {
        let unary = |f: fn(f64) -> f64| match args {
            [a] => Ok(f(*a)),
            _ => Err(FuncEvalError::NumberArgs(1)),
        };
        match name {
            "sqrt" => unary(f64::sqrt),
            "exp" => unary(f64::exp),
            "ln" => unary(f64::ln),
            "abs" => unary(f64::abs),
            "min" if !args.is_empty() => Ok(args.iter().copied().fold(f64::INFINITY, f64::min)),
            "max" if !args.is_empty() => Ok(args.iter().copied().fold(f64::NEG_INFINITY, f64::max)),
            "min" | "max" => Err(FuncEvalError::TooFewArguments),
            _ => Err(FuncEvalError::UnknownFunction),
        }
    }
}

impl ScalarExpr {
    /// Parses `source`; every identifier must be one of `vars`.
    pub fn parse(source: &str, vars: &'static [&'static str]) -> Result<Self> {
        let expr: meval::Expr = source.parse().map_err(|e: meval::Error| Error::Expression {
            expr: source.to_string(),
            reason: e.to_string(),
        })?;
        let probe = vec![1.0; vars.len()];
        expr.eval_with_context(Bindings {
            names: vars,
            values: &probe,
        })
        .map_err(|e| Error::Expression {
            expr: source.to_string(),
            reason: format!("{e} (allowed variables: {})", vars.join(", ")),
        })?;
        Ok(ScalarExpr {
            source: source.to_string(),
            expr,
            vars,
        })
    }

    /// Evaluates with `values` bound positionally to the declared variables.
    pub fn eval(&self, values: &[f64]) -> f64 {
        debug_assert_eq!(values.len(), self.vars.len());
        self.expr
            .eval_with_context(Bindings {
                names: self.vars,
                values,
            })
            .unwrap_or(f64::NAN)
    }
}
