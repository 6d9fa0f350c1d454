use fewsim_core::energy::{
    cooling_water_m3, dispatch, emissions, water_infrastructure_demand, Dispatch, Fuel, Plant,
    PlantCatalog,
};
use fewsim_core::units::capability_gwh;
use fewsim_core::water::AllocationMatrix;
use fewsim_core::YearMonth;
use proptest::prelude::*;

const FUELS: [Fuel; 6] = [
    Fuel::Coal,
    Fuel::NaturalGas,
    Fuel::Uranium,
    Fuel::Solar,
    Fuel::Wind,
    Fuel::Hydro,
];

fn catalog() -> impl Strategy<Value = PlantCatalog> {
    proptest::collection::vec((0usize..6, 1.0f64..1000.0, any::<bool>(), 0.0f64..3000.0), 1..12)
        .prop_flat_map(|specs| {
            let n = specs.len();
            (Just(specs), Just((1..=n as u32).collect::<Vec<_>>()).prop_shuffle())
        })
        .prop_map(|(specs, ranks)| PlantCatalog {
            plants: specs
                .into_iter()
                .zip(ranks)
                .enumerate()
                .map(|(i, ((f, mw, in_area, water), rank))| Plant {
                    id: format!("p{i}"),
                    label: format!("Plant {i}"),
                    in_area,
                    fuel: FUELS[f],
                    capacity_mw: mw,
                    merit_rank: rank,
                    emission_factor_t_per_gwh: if FUELS[f].is_renewable() { 0.0 } else { 400.0 + i as f64 },
                    water_factor_m3_per_gwh: water,
                })
                .collect(),
        })
}

fn run(c: &PlantCatalog, net: f64, loss: f64) -> Dispatch {
    dispatch(c, net, loss, 0.15, 0.55, YearMonth::new(2030, 7).hours())
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 * a.abs().max(b.abs()).max(1.0)
}

/// Checks that no plant runs while a plant earlier in merit order has spare
/// capability.
fn merit_audit(c: &PlantCatalog, d: &Dispatch, hours: f64) -> Result<(), String> {
    let order = c.merit_order();
    let mut seen_spare = None;
    for &i in &order {
        let cap = capability_gwh(c.plants[i].capacity_mw, hours);
        let g = d.generation_gwh[i];
        if g > 0.0 {
            if let Some(j) = seen_spare {
                return Err(format!("plant {i} runs while plant {j} has spare capability"));
            }
        }
        if g < cap * (1.0 - 1e-12) {
            seen_spare.get_or_insert(i);
        }
    }
    Ok(())
}

proptest! {
    #[test]
    fn generation_plus_unserved_equals_gross(c in catalog(), net in 0.0f64..1e5, loss in 0.0f64..0.2) {
        let d = run(&c, net, loss);
        let gen: f64 = d.generation_gwh.iter().sum();
        prop_assert!(close(gen + d.unserved_gwh, net / (1.0 - loss)));
        prop_assert!(close(d.gross_gwh, net / (1.0 - loss)));
        prop_assert!(d.unserved_gwh >= 0.0);
    }

    #[test]
    fn merit_order_is_respected(c in catalog(), net in 0.0f64..1e5) {
        let d = run(&c, net, 0.05);
        let hours = YearMonth::new(2030, 7).hours();
        if let Err(e) = merit_audit(&c, &d, hours) {
            prop_assert!(false, "{}", e);
        }
        for (g, p) in d.generation_gwh.iter().zip(&c.plants) {
            prop_assert!(*g >= 0.0 && *g <= capability_gwh(p.capacity_mw, hours) * (1.0 + 1e-12));
        }
    }

    #[test]
    fn generation_is_monotone_in_demand(c in catalog(), a in 0.0f64..5e4, extra in 0.0f64..5e4) {
        let lo = run(&c, a, 0.05);
        let hi = run(&c, a + extra, 0.05);
        for (l, h) in lo.generation_gwh.iter().zip(&hi.generation_gwh) {
            prop_assert!(h >= l);
        }
        prop_assert!(hi.unserved_gwh >= lo.unserved_gwh);
        prop_assert!(emissions(&hi.generation_gwh, &c).1 >= emissions(&lo.generation_gwh, &c).1);
        prop_assert!(cooling_water_m3(&hi.generation_gwh, &c) >= cooling_water_m3(&lo.generation_gwh, &c));
    }

    #[test]
    fn zero_loss_dispatches_net_demand(c in catalog(), net in 0.0f64..1e4) {
        let d = run(&c, net, 0.0);
        prop_assert_eq!(d.gross_gwh, net);
    }

    #[test]
    fn out_of_area_plants_need_no_local_water(c in catalog(), net in 0.0f64..1e5) {
        let d = run(&c, net, 0.05);
        let expect: f64 = d
            .generation_gwh
            .iter()
            .zip(&c.plants)
            .map(|(g, p)| if p.in_area { g * p.water_factor_m3_per_gwh } else { 0.0 })
            .sum();
        prop_assert!(close(cooling_water_m3(&d.generation_gwh, &c), expect));
    }

    #[test]
    fn infrastructure_energy_is_linear_in_deliveries(
        flows in proptest::collection::vec(0.0f64..1e7, 4),
        k in proptest::collection::vec(0.0f64..3.0, 2),
        scale in 0.0f64..4.0,
    ) {
        let matrix = |f: &[f64]| AllocationMatrix {
            month: YearMonth::new(2030, 1),
            delivered: vec![vec![f[0], f[1]], vec![f[2], f[3]]],
            unmet: vec![0.0, 0.0],
            demand: vec![f[0] + f[2], f[1] + f[3]],
        };
        let base = water_infrastructure_demand(&matrix(&flows), &k);
        let scaled: Vec<f64> = flows.iter().map(|v| v * scale).collect();
        prop_assert!(close(water_infrastructure_demand(&matrix(&scaled), &k), base * scale));
    }
}

#[test]
fn cooling_water_hand_value() {
    let plant = |in_area| Plant {
        id: "x".into(),
        label: "x".into(),
        in_area,
        fuel: Fuel::Coal,
        capacity_mw: 100.0,
        merit_rank: 1,
        emission_factor_t_per_gwh: 1000.0,
        water_factor_m3_per_gwh: 2000.0,
    };
    let c = PlantCatalog {
        plants: vec![plant(true), plant(false)],
    };
    assert_eq!(cooling_water_m3(&[10.0, 10.0], &c), 20000.0);
    assert_eq!(cooling_water_m3(&[0.0, 0.0], &c), 0.0);
}
