//! Arithmetic expressions in one variable `x`, used for configured rate profiles.
//!
//! Grammar: `+ - * / ^`, unary minus, parentheses, numeric literals, the
//! variable `x` and the functions `exp ln sqrt abs sin cos max min pow`.

use nom::branch::alt;
use nom::bytes::complete::tag;
use nom::character::complete::{alpha1, char, multispace0};
use nom::combinator::{all_consuming, map, value};
use nom::multi::{many0, separated_list1};
use nom::number::complete::double;
use nom::sequence::{delimited, pair, preceded};
use nom::{IResult, Parser};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
enum Node {
    Num(f64),
    Var,
    Neg(Box<Node>),
    Bin(char, Box<Node>, Box<Node>),
    Call(String, Vec<Node>),
}

/// Parsed expression, evaluated repeatedly at different `x`.
#[derive(Debug, Clone, PartialEq)]
pub struct Expression {
    root: Node,
}

impl Expression {
    pub fn parse(text: &str) -> Result<Self> {
        let err = |reason: String| Error::Expression {
            expr: text.to_string(),
            reason,
        };
        let (_, root) = all_consuming(delimited(multispace0, expr, multispace0))
            .parse(text)
            .map_err(|e| err(format!("syntax error: {e}")))?;
        check_calls(&root).map_err(err)?;
        Ok(Self { root })
    }

    pub fn eval(&self, x: f64) -> f64 {
        eval(&self.root, x)
    }
}

fn ws<'a, O>(
    inner: impl Parser<&'a str, Output = O, Error = nom::error::Error<&'a str>>,
) -> impl Parser<&'a str, Output = O, Error = nom::error::Error<&'a str>> {
    delimited(multispace0, inner, multispace0)
}

fn fold(first: Node, rest: Vec<(char, Node)>) -> Node {
    rest.into_iter()
        .fold(first, |acc, (op, rhs)| Node::Bin(op, Box::new(acc), Box::new(rhs)))
}

fn expr(i: &str) -> IResult<&str, Node> {
    let (i, first) = term(i)?;
    let (i, rest) = many0(pair(ws(alt((char('+'), char('-')))), term)).parse(i)?;
    Ok((i, fold(first, rest)))
}

fn term(i: &str) -> IResult<&str, Node> {
    let (i, first) = unary(i)?;
    let (i, rest) = many0(pair(ws(alt((char('*'), char('/')))), unary)).parse(i)?;
    Ok((i, fold(first, rest)))
}

fn power(i: &str) -> IResult<&str, Node> {
    let (i, base) = atom(i)?;
    let (i, exp) = many0(preceded(ws(char('^')), unary)).parse(i)?;
    // right associative
    let mut items = vec![base];
    items.extend(exp);
    let mut node = items.pop().expect("non-empty");
    while let Some(lhs) = items.pop() {
        node = Node::Bin('^', Box::new(lhs), Box::new(node));
    }
    Ok((i, node))
}

fn unary(i: &str) -> IResult<&str, Node> {
    alt((
        map(preceded(ws(char('-')), unary), |n| Node::Neg(Box::new(n))),
        preceded(ws(char('+')), unary),
        power,
    ))
    .parse(i)
}

fn atom(i: &str) -> IResult<&str, Node> {
    ws(alt((
        delimited(char('('), expr, ws(char(')'))),
        call,
        value(Node::Var, tag("x")),
        map(double, Node::Num),
    )))
    .parse(i)
}

fn call(i: &str) -> IResult<&str, Node> {
    let (i, name) = alpha1(i)?;
    if name == "x" {
        return Err(nom::Err::Error(nom::error::Error::new(
            i,
            nom::error::ErrorKind::Tag,
        )));
    }
    let (i, args) = delimited(
        ws(char('(')),
        separated_list1(ws(char(',')), expr),
        ws(char(')')),
    )
    .parse(i)?;
    Ok((i, Node::Call(name.to_string(), args)))
}

fn arity(name: &str) -> Option<usize> {
    match name {
        "exp" | "ln" | "sqrt" | "abs" | "sin" | "cos" => Some(1),
        "max" | "min" | "pow" => Some(2),
        _ => None,
    }
}

fn check_calls(node: &Node) -> std::result::Result<(), String> {
    match node {
        Node::Num(_) | Node::Var => Ok(()),
        Node::Neg(n) => check_calls(n),
        Node::Bin(_, a, b) => check_calls(a).and(check_calls(b)),
        Node::Call(name, args) => {
            let want = arity(name).ok_or_else(|| format!("unknown function `{name}`"))?;
            if args.len() != want {
                return Err(format!("`{name}` takes {want} argument(s), got {}", args.len()));
            }
            args.iter().try_for_each(check_calls)
        }
    }
}

fn eval(node: &Node, x: f64) -> f64 {
    match node {
        Node::Num(v) => *v,
        Node::Var => x,
        Node::Neg(n) => -eval(n, x),
        Node::Bin(op, a, b) => {
            let (a, b) = (eval(a, x), eval(b, x));
            match op {
                '+' => a + b,
                '-' => a - b,
                '*' => a * b,
                '/' => a / b,
                _ => a.powf(b),
            }
        }
        Node::Call(name, args) => {
            let a = eval(&args[0], x);
            match name.as_str() {
                "exp" => a.exp(),
                "ln" => a.ln(),
                "sqrt" => a.sqrt(),
                "abs" => a.abs(),
                "sin" => a.sin(),
                "cos" => a.cos(),
                "max" => a.max(eval(&args[1], x)),
                "min" => a.min(eval(&args[1], x)),
                _ => a.powf(eval(&args[1], x)),
            }
        }
    }
}
