use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor};

/// How a projected map reaches the teacher's spatial size.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpatialMap {
    Same,
    /// Average pooling with kernel and stride equal to the factor.
    Pool(usize),
    /// Nearest-neighbour upsampling by the factor.
    Upsample(usize),
}

fn spatial_factor(student: usize, teacher: usize, axis: &str) -> Result<SpatialMap> {
    if student == teacher {
        Ok(SpatialMap::Same)
    } else if student > teacher && student.is_multiple_of(teacher) {
        Ok(SpatialMap::Pool(student / teacher))
    } else if teacher > student && teacher.is_multiple_of(student) {
        Ok(SpatialMap::Upsample(teacher / student))
    } else {
        Err(Error::dim(
            "project_features",
            format!("{axis} axis: student {student} and teacher {teacher} are not integer multiples"),
        ))
    }
}

/// Learnable map from a student tap shape `[C_s, H_s, W_s]` onto a teacher tap
/// shape: a 1x1 convolution when channel counts differ, then pooling or
/// upsampling when spatial sizes differ. Identity when shapes agree.
#[derive(Debug, Clone)]
pub struct Projector {
    name: String,
    weight: Option<Tensor>,
    spatial: SpatialMap,
    student: [usize; 3],
    teacher: [usize; 3],
}

impl Projector {
    pub fn new(name: impl Into<String>, student: [usize; 3], teacher: [usize; 3], seed: u64) -> Result<Self> {
        let spatial_h = spatial_factor(student[1], teacher[1], "height")?;
        let spatial_w = spatial_factor(student[2], teacher[2], "width")?;
        if spatial_h != spatial_w {
            return Err(Error::dim(
                "project_features",
                format!("anisotropic rescaling from {student:?} to {teacher:?}"),
            ));
        }
        let weight = if student[0] != teacher[0] {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let normal = Normal::new(0.0, (1.0 / student[0] as f64).sqrt()).expect("finite std");
            let n = teacher[0] * student[0];
            Some(Tensor::param(vec![teacher[0], student[0], 1, 1], (0..n).map(|_| normal.sample(&mut rng)).collect())?)
        } else {
            None
        };
        Ok(Projector { name: name.into(), weight, spatial: spatial_h, student, teacher })
    }

    pub fn is_identity(&self) -> bool {
        self.weight.is_none() && self.spatial == SpatialMap::Same
    }

    pub fn spatial(&self) -> SpatialMap {
        self.spatial
    }

    pub fn params(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.weight.iter().map(move |w| (self.name.as_str(), w))
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        let name = self.name.as_str();
        self.weight.iter_mut().map(move |w| (name, w))
    }

    pub fn forward(&self, x: &Tensor, tape: Option<&Tape>) -> Result<Tensor> {
        match x.shape() {
            [_, c, h, w] if [*c, *h, *w] == self.student => {}
            other => {
                return Err(Error::dim(
                    "project_features",
                    format!("projector {} expects [N,{:?}], got {other:?}", self.name, self.student),
                ))
            }
        }
        let mut h = x.clone();
        if let Some(w) = &self.weight {
            let w = match tape {
                Some(t) => t.watch(w),
                None => w.clone(),
            };
            h = h.conv2d(&w, 1, 0)?;
        }
        match self.spatial {
            SpatialMap::Same => Ok(h),
            SpatialMap::Pool(f) => h.avg_pool2d(f, f, 0),
            SpatialMap::Upsample(f) => h.upsample_nearest(f),
        }
    }

    pub fn teacher_shape(&self) -> [usize; 3] {
        self.teacher
    }
}

fn chw(op: &'static str, t: &Tensor) -> Result<[usize; 3]> {
    match *t.shape() {
        [_, c, h, w] => Ok([c, h, w]),
        _ => Err(Error::dim(op, format!("expected [N,C,H,W], got {:?}", t.shape()))),
    }
}

/// Maps `student_tap` onto `teacher_tap`'s shape with `projector`, or passes it
/// through unchanged when the shapes already agree.
pub fn project_features(projector: Option<&Projector>, student_tap: &Tensor, teacher_tap: &Tensor, tape: Option<&Tape>) -> Result<Tensor> {
    let (s, t) = (chw("project_features", student_tap)?, chw("project_features", teacher_tap)?);
    let out = match projector {
        Some(p) => p.forward(student_tap, tape)?,
        None if s == t => student_tap.clone(),
        None => {
            return Err(Error::dim(
                "project_features",
                format!("no projector for student {s:?} onto teacher {t:?}"),
            ))
        }
    };
    if out.shape()[1..] != teacher_tap.shape()[1..] {
        return Err(Error::dim(
            "project_features",
            format!("projected {:?} does not match teacher {:?}", out.shape(), teacher_tap.shape()),
        ));
    }
    Ok(out)
}
