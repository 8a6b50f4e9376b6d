//! Model assembly recipes: a declarative description of lattice, basis,
//! proximity, and trend that can build structures for observed data and
//! prediction inputs for new locations. Shared by the simulation harness
//! and the command-line tools.

use nalgebra::{DMatrix, DVector};

use crate::basis::{
    bisquare_matrix, incidence_matrix, BasisMatrix, BisquareSet, Lattice, Point,
};
use crate::car::{proximity_first_order, proximity_threshold, CarStructure};
use crate::error::{FgpError, Result};
use crate::likelihood::ModelRef;
use crate::model::{FgpParams, FgpStructure, GgmStructure};
use crate::predict::{predict_rows, PredictionRequest, PredictionResult};

/// Lattice geometry description.
#[derive(Debug, Clone)]
pub enum DomainSpec {
    Line {
        a: f64,
        b: f64,
        cells: usize,
    },
    Grid {
        x: (f64, f64),
        y: (f64, f64),
        nx: usize,
        ny: usize,
    },
}

/// How the proximity matrix over lattice cells is built.
#[derive(Debug, Clone, Copy)]
pub enum ProximityRule {
    Threshold { d: f64 },
    FirstOrder,
}

/// Fixed trend design.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrendSpec {
    Zero,
    Constant,
}

impl TrendSpec {
    pub fn matrix(&self, n: usize) -> DMatrix<f64> {
        match self {
            TrendSpec::Zero => DMatrix::zeros(n, 0),
            TrendSpec::Constant => DMatrix::from_element(n, 1, 1.0),
        }
    }
}

/// Declarative model description.
#[derive(Debug, Clone)]
pub struct FgpDesign {
    pub domain: DomainSpec,
    /// Bisquare counts per resolution level; empty gives a pure-CAR model.
    pub basis_counts: Vec<usize>,
    /// `None` drops the graphical component entirely (pure low-rank).
    pub proximity: Option<ProximityRule>,
    pub trend: TrendSpec,
}

/// A design with its lattice, basis set, and CAR skeleton built once and
/// reused across replicates and prediction calls.
#[derive(Debug, Clone)]
pub struct DesignContext {
    design: FgpDesign,
    lattice: Lattice,
    bisquare: Option<BisquareSet>,
    car: Option<CarStructure>,
}

impl DesignContext {
    pub fn new(design: FgpDesign) -> Result<Self> {
        let lattice = match design.domain {
            DomainSpec::Line { a, b, cells } => Lattice::line(a, b, cells)?,
            DomainSpec::Grid { x, y, nx, ny } => Lattice::grid(x, y, nx, ny)?,
        };
        let bisquare = if design.basis_counts.is_empty() {
            None
        } else {
            Some(match design.domain {
                DomainSpec::Line { a, b, .. } => {
                    BisquareSet::multiresolution_1d((a, b), &design.basis_counts)?
                }
                DomainSpec::Grid { x, y, .. } => {
                    BisquareSet::multiresolution_2d(x, y, &design.basis_counts)?
                }
            })
        };
        let car = match design.proximity {
            Some(ProximityRule::Threshold { d }) => Some(CarStructure::with_identity_delta(
                proximity_threshold(lattice.centers(), d),
            )?),
            Some(ProximityRule::FirstOrder) => Some(CarStructure::with_identity_delta(
                proximity_first_order(&lattice),
            )?),
            None => None,
        };
        Ok(DesignContext {
            design,
            lattice,
            bisquare,
            car,
        })
    }

    pub fn design(&self) -> &FgpDesign {
        &self.design
    }

    pub fn lattice(&self) -> &Lattice {
        &self.lattice
    }

    pub fn bisquare(&self) -> Option<&BisquareSet> {
        self.bisquare.as_ref()
    }

    pub fn car(&self) -> Option<&CarStructure> {
        self.car.as_ref()
    }

    pub fn r(&self) -> usize {
        self.bisquare.as_ref().map_or(0, |b| b.len())
    }

    fn basis_at(&self, locations: &[Point]) -> BasisMatrix {
        match &self.bisquare {
            Some(bs) => bisquare_matrix(bs, locations),
            None => BasisMatrix::empty(locations.len()),
        }
    }

    /// Builds the fixed structure for a set of observed locations with
    /// noise diagonal `v_eps`.
    pub fn structure_for(
        &self,
        locations: &[Point],
        v_eps: DVector<f64>,
    ) -> Result<FgpStructure> {
        let n = locations.len();
        let x = self.design.trend.matrix(n);
        let basis = self.basis_at(locations);
        let ggm = match &self.car {
            Some(car) => {
                let incidence = incidence_matrix(&self.lattice, locations)?;
                Some(GgmStructure::new(incidence, car.clone())?)
            }
            None => None,
        };
        FgpStructure::new(x, basis, ggm, v_eps)
    }

    /// Trend rows, basis rows, and containing cells at new locations.
    pub fn prediction_inputs(
        &self,
        locations: &[Point],
    ) -> Result<(DMatrix<f64>, BasisMatrix, Option<Vec<usize>>)> {
        let xp = self.design.trend.matrix(locations.len());
        let sp = self.basis_at(locations);
        let cells = match &self.car {
            Some(_) => Some(
                incidence_matrix(&self.lattice, locations)?
                    .cells()
                    .to_vec(),
            ),
            None => None,
        };
        Ok((xp, sp, cells))
    }

    /// Location-based prediction against a fitted model.
    pub fn predict(
        &self,
        model: ModelRef,
        params: &FgpParams,
        z: &DVector<f64>,
        locations: &[Point],
        req: &PredictionRequest,
    ) -> Result<PredictionResult> {
        if locations.is_empty() {
            return Err(FgpError::EmptyHoldout);
        }
        let (xp, sp, cells) = self.prediction_inputs(locations)?;
        let ws = model.workspace(params)?;
        predict_rows(&ws, z, &xp, &sp, cells.as_deref(), req)
    }
}
