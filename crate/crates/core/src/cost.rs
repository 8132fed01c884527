//! Camera-versus-per-space-sensor deployment cost.
//!
//! Amounts are held as integer cents so totals and break-even points are
//! exact. One camera system is assumed to cover the whole lot; larger lots
//! needing several cameras pass `cameras > 1`. Maintenance is not modeled.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chart::{LineChart, LineSeries};

#[derive(Debug, Error, PartialEq)]
pub enum CostError {
    #[error("bill of materials has no items")]
    EmptyBom,
    #[error("item {0:?} has a negative or non-finite cost")]
    NegativeCost(String),
    #[error("costs must be positive (camera {camera}, sensor per space {sensor})")]
    NonPositive { camera: Usd, sensor: Usd },
    #[error("max_spaces {max_spaces} is below the break-even point {breakeven}")]
    RangeBelowBreakeven { max_spaces: u32, breakeven: u32 },
}

/// US dollars in integer cents.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Usd(pub i64);

impl Usd {
    pub fn from_dollars(d: f64) -> Option<Self> {
        d.is_finite().then(|| Usd((d * 100.0).round() as i64))
    }

    pub fn cents(self) -> i64 {
        self.0
    }

    pub fn dollars(self) -> f64 {
        self.0 as f64 / 100.0
    }
}

impl std::fmt::Display for Usd {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let sign = if self.0 < 0 { "-" } else { "" };
        write!(f, "{sign}{}.{:02}", self.0.abs() / 100, self.0.abs() % 100)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BomItem {
    pub name: String,
    pub quantity: u32,
    /// Unit cost in USD.
    pub unit_cost: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct BillOfMaterials {
    pub items: Vec<BomItem>,
}

impl BillOfMaterials {
    pub fn new(items: impl IntoIterator<Item = (&'static str, u32, f64)>) -> Self {
        Self {
            items: items
                .into_iter()
                .map(|(name, quantity, unit_cost)| BomItem {
                    name: name.to_owned(),
                    quantity,
                    unit_cost,
                })
                .collect(),
        }
    }

    /// Camera node: single-board computer, camera module, power supply,
    /// storage card and weatherproof case.
    pub fn reference_camera() -> Self {
        Self::new([
            ("Raspberry Pi 4 Model B (4GB RAM)", 1, 55.0),
            ("Raspberry Pi Camera Module 3", 1, 25.0),
            ("Power Supply", 1, 10.0),
            ("MicroSD Card", 1, 15.0),
            ("Case (Weatherproof)", 1, 15.0),
        ])
    }

    /// One sensor node per parking space.
    pub fn reference_sensor() -> Self {
        Self::new([
            ("Microcontroller", 1, 5.0),
            ("Small Solar Panel", 1, 5.0),
            ("Battery", 1, 6.0),
            ("Charge Controller", 1, 2.0),
            ("Sensor", 1, 2.0),
            ("Enclosure (Weatherproof)", 1, 10.0),
        ])
    }
}

pub fn bom_total(bom: &BillOfMaterials) -> Result<Usd, CostError> {
    if bom.items.is_empty() {
        return Err(CostError::EmptyBom);
    }
    let mut total = 0i64;
    for item in &bom.items {
        let unit = Usd::from_dollars(item.unit_cost)
            .filter(|u| u.0 >= 0)
            .ok_or_else(|| CostError::NegativeCost(item.name.clone()))?;
        total += unit.0 * item.quantity as i64;
    }
    Ok(Usd(total))
}

/// Smallest number of spaces at which per-space sensors cost at least as
/// much as the camera system.
pub fn breakeven_spaces(camera_total: Usd, sensor_per_space: Usd) -> Result<u32, CostError> {
    if camera_total.0 <= 0 || sensor_per_space.0 <= 0 {
        return Err(CostError::NonPositive {
            camera: camera_total,
            sensor: sensor_per_space,
        });
    }
    let n = (camera_total.0 + sensor_per_space.0 - 1) / sensor_per_space.0;
    Ok(u32::try_from(n).unwrap_or(u32::MAX))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CostRow {
    pub spaces: u32,
    pub camera: f64,
    pub sensor: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CostCurves {
    pub breakeven: u32,
    pub rows: Vec<CostRow>,
}

impl CostCurves {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("spaces,camera_usd,sensor_usd,camera_cheaper\n");
        for r in &self.rows {
            out.push_str(&format!("{},{:.2},{:.2},{}\n", r.spaces, r.camera, r.sensor, r.spaces >= self.breakeven));
        }
        out
    }

    pub fn to_svg(&self) -> String {
        LineChart {
            title: "Cost comparison: camera vs per-space sensors".into(),
            x_label: "parking spaces".into(),
            y_label: "total cost (USD)".into(),
            series: vec![
                LineSeries {
                    name: "camera".into(),
                    points: self.rows.iter().map(|r| (r.spaces as f64, r.camera)).collect(),
                },
                LineSeries {
                    name: "sensors".into(),
                    points: self.rows.iter().map(|r| (r.spaces as f64, r.sensor)).collect(),
                },
            ],
            markers: vec![(format!("break-even: {} spaces", self.breakeven), self.breakeven as f64)],
        }
        .to_svg()
    }
}

/// Cumulative cost of both options for lots of 1..=`max_spaces` spaces.
pub fn cost_curves(camera_total: Usd, sensor_per_space: Usd, max_spaces: u32) -> Result<CostCurves, CostError> {
    let breakeven = breakeven_spaces(camera_total, sensor_per_space)?;
    if max_spaces < breakeven {
        return Err(CostError::RangeBelowBreakeven { max_spaces, breakeven });
    }
    let rows = (1..=max_spaces)
        .map(|n| CostRow {
            spaces: n,
            camera: camera_total.dollars(),
            sensor: Usd(sensor_per_space.0 * n as i64).dollars(),
        })
        .collect();
    Ok(CostCurves { breakeven, rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn usd(d: i64) -> Usd {
        Usd(d * 100)
    }

    #[test]
    fn reference_boms() {
        assert_eq!(bom_total(&BillOfMaterials::reference_camera()).unwrap(), usd(120));
        assert_eq!(bom_total(&BillOfMaterials::reference_sensor()).unwrap(), usd(30));
        assert_eq!(bom_total(&BillOfMaterials::new([("x", 2, 7.0)])).unwrap(), usd(14));
    }

    #[test]
    fn bom_errors() {
        assert_eq!(bom_total(&BillOfMaterials::default()), Err(CostError::EmptyBom));
        assert_eq!(
            bom_total(&BillOfMaterials::new([("bad", 1, -1.0)])),
            Err(CostError::NegativeCost("bad".into()))
        );
    }

    #[test]
    fn breakeven_examples() {
        assert_eq!(breakeven_spaces(usd(120), usd(30)), Ok(4));
        assert_eq!(breakeven_spaces(usd(177), usd(15)), Ok(12));
        assert_eq!(breakeven_spaces(usd(30), usd(30)), Ok(1));
        assert!(breakeven_spaces(usd(120), Usd(0)).is_err());
    }

    #[test]
    fn curves() {
        let c = cost_curves(usd(120), usd(30), 16).unwrap();
        assert_eq!(c.breakeven, 4);
        assert_eq!(c.rows.last().unwrap().sensor, 480.0);
        assert!(c.rows.iter().all(|r| r.camera == 120.0));

        let edge = cost_curves(usd(120), usd(30), 4).unwrap();
        let last = edge.rows.last().unwrap();
        assert_eq!((last.spaces, last.sensor, last.camera), (4, 120.0, 120.0));

        assert_eq!(
            cost_curves(usd(120), usd(30), 3),
            Err(CostError::RangeBelowBreakeven { max_spaces: 3, breakeven: 4 })
        );
        let svg = c.to_svg();
        assert_eq!(svg.matches("class=\"series\"").count(), 2);
        assert!(svg.contains("break-even: 4 spaces"));
        assert!(c.to_csv().lines().nth(4).unwrap().starts_with("4,120.00,120.00,true"));
    }

    #[test]
    fn usd_display() {
        assert_eq!(Usd(17700).to_string(), "177.00");
        assert_eq!(Usd(-5).to_string(), "-0.05");
    }

    proptest! {
        #[test]
        fn breakeven_monotone(cam in 1i64..100_000, s in 1i64..10_000, dc in 0i64..1000, ds in 0i64..1000) {
            let base = breakeven_spaces(Usd(cam), Usd(s)).unwrap();
            prop_assert!(breakeven_spaces(Usd(cam + dc), Usd(s)).unwrap() >= base);
            prop_assert!(breakeven_spaces(Usd(cam), Usd(s + ds)).unwrap() <= base);
            let n = base as i64;
            prop_assert!(n * s >= cam);
            prop_assert!((n - 1) * s < cam);
        }
    }
}
