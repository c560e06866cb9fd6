use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::geom::Vec3;

/// Parametric surface family behind a category.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Template {
    /// Capped cylinder.
    Can,
    /// Cylinder body, conical shoulder, narrow neck.
    Bottle,
    /// Open spherical cap.
    Bowl,
    /// Base slab and lid slab joined at a hinge.
    Laptop,
    /// Open cylinder with bottom and a half-torus handle.
    Mug,
    /// Plain box.
    CameraBox,
}

impl Template {
    pub const ALL: [Template; 6] = [
        Template::Can,
        Template::Bottle,
        Template::Bowl,
        Template::Laptop,
        Template::Mug,
        Template::CameraBox,
    ];

    pub fn code(self) -> u8 {
        match self {
            Template::Can => 0,
            Template::Bottle => 1,
            Template::Bowl => 2,
            Template::Laptop => 3,
            Template::Mug => 4,
            Template::CameraBox => 5,
        }
    }

    pub fn from_code(code: u8) -> Result<Self> {
        Template::ALL
            .into_iter()
            .find(|t| t.code() == code)
            .ok_or_else(|| Error::Format(format!("unknown template code {code}")))
    }
}

/// Named closed interval for one shape parameter (meters or degrees).
#[derive(Clone, Debug, PartialEq)]
pub struct ParamRange {
    pub name: String,
    pub lo: f64,
    pub hi: f64,
}

impl ParamRange {
    fn new(name: &str, lo: f64, hi: f64) -> Self {
        ParamRange {
            name: name.to_string(),
            lo,
            hi,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CategorySpec {
    pub name: String,
    pub template: Template,
    pub ranges: Vec<ParamRange>,
    /// Canonical-frame symmetry axis (`+y`) for rotationally symmetric
    /// templates.
    pub symmetry_axis: Option<Vec3>,
}

pub const BUILTIN_CATEGORIES: [&str; 6] = ["bottle", "bowl", "camera", "can", "laptop", "mug"];

impl CategorySpec {
    /// One of the six built-in categories.
    pub fn builtin(name: &str) -> Result<Self> {
        let up = Some([0.0, 1.0, 0.0]);
        let (template, ranges, axis) = match name {
            "can" => (
                Template::Can,
                vec![ParamRange::new("radius", 0.025, 0.04), ParamRange::new("height", 0.08, 0.13)],
                up,
            ),
            "bottle" => (
                Template::Bottle,
                vec![
                    ParamRange::new("body_radius", 0.03, 0.045),
                    ParamRange::new("body_height", 0.10, 0.16),
                    ParamRange::new("shoulder_height", 0.02, 0.04),
                    ParamRange::new("neck_radius", 0.010, 0.016),
                    ParamRange::new("neck_height", 0.03, 0.06),
                ],
                up,
            ),
            "bowl" => (
                Template::Bowl,
                vec![
                    ParamRange::new("sphere_radius", 0.06, 0.09),
                    ParamRange::new("depth_ratio", 0.55, 0.95),
                ],
                up,
            ),
            "laptop" => (
                Template::Laptop,
                vec![
                    ParamRange::new("width", 0.25, 0.35),
                    ParamRange::new("depth", 0.18, 0.25),
                    ParamRange::new("thickness", 0.01, 0.02),
                    ParamRange::new("hinge_deg", 70.0, 130.0),
                ],
                None,
            ),
            "mug" => (
                Template::Mug,
                vec![
                    ParamRange::new("radius", 0.035, 0.05),
                    ParamRange::new("height", 0.08, 0.11),
                    ParamRange::new("handle_radius", 0.025, 0.035),
                    ParamRange::new("handle_tube", 0.005, 0.008),
                ],
                None,
            ),
            "camera" => (
                Template::CameraBox,
                vec![
                    ParamRange::new("width", 0.08, 0.14),
                    ParamRange::new("height", 0.06, 0.10),
                    ParamRange::new("depth", 0.04, 0.08),
                ],
                None,
            ),
            other => return Err(Error::invalid(format!("unknown category `{other}`"))),
        };
        let spec = CategorySpec {
            name: name.to_string(),
            template,
            ranges,
            symmetry_axis: axis,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn is_symmetric(&self) -> bool {
        self.symmetry_axis.is_some()
    }

    pub fn validate(&self) -> Result<()> {
        if self.name.is_empty() || self.name.contains([',', '\n', '=']) {
            return Err(Error::invalid(format!("bad category name `{}`", self.name)));
        }
        for r in &self.ranges {
            if !(r.lo > 0.0 && r.hi >= r.lo && r.hi.is_finite()) {
                return Err(Error::invalid(format!(
                    "category `{}`: range `{}` must be positive",
                    self.name, r.name
                )));
            }
        }
        let needs_axis = matches!(self.template, Template::Can | Template::Bottle | Template::Bowl);
        if needs_axis != self.symmetry_axis.is_some() {
            return Err(Error::invalid(format!(
                "category `{}`: symmetry axis must be declared exactly for symmetric templates",
                self.name
            )));
        }
        if self.ranges.len() != param_count(self.template) {
            return Err(Error::invalid(format!(
                "category `{}`: expected {} parameter ranges",
                self.name,
                param_count(self.template)
            )));
        }
        Ok(())
    }
}

pub(crate) fn param_count(t: Template) -> usize {
    match t {
        Template::Can => 2,
        Template::Bottle => 5,
        Template::Bowl => 2,
        Template::Laptop => 4,
        Template::Mug => 4,
        Template::CameraBox => 3,
    }
}

impl fmt::Display for CategorySpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name)
    }
}

impl FromStr for CategorySpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        CategorySpec::builtin(s.trim())
    }
}

/// Parses a comma-separated list of built-in category names.
pub fn parse_categories(list: &str) -> Result<Vec<CategorySpec>> {
    let cats: Vec<CategorySpec> = list
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(str::parse)
        .collect::<Result<_>>()?;
    if cats.is_empty() {
        return Err(Error::invalid("no categories given"));
    }
    for (i, c) in cats.iter().enumerate() {
        if cats[..i].iter().any(|o| o.name == c.name) {
            return Err(Error::invalid(format!("duplicate category `{}`", c.name)));
        }
    }
    Ok(cats)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtins_validate_and_declare_symmetry() {
        for name in BUILTIN_CATEGORIES {
            let c = CategorySpec::builtin(name).unwrap();
            let symmetric = matches!(name, "can" | "bottle" | "bowl");
            assert_eq!(c.is_symmetric(), symmetric, "{name}");
        }
        assert!(CategorySpec::builtin("teapot").is_err());
    }

    #[test]
    fn list_parsing() {
        let c = parse_categories("bottle, bowl,mug").unwrap();
        assert_eq!(c.len(), 3);
        assert!(parse_categories("mug,mug").is_err());
        assert!(parse_categories("").is_err());
    }

    #[test]
    fn template_codes_round_trip() {
        for t in Template::ALL {
            assert_eq!(Template::from_code(t.code()).unwrap(), t);
        }
        assert!(Template::from_code(42).is_err());
    }
}
