//! ADC code to temperature through the divider and the beta equation, for
//! both divider orientations.
//!
//! cargo run --example thermistor

use pvdaq::convert::{
    adc_code_to_voltage, divider_to_resistance, resistance_to_temperature, thermistor_code_to_celsius,
    DividerOrientation, ThermistorCal,
};

fn main() {
    let full_scale = 4.096;
    for orientation in [DividerOrientation::FixedLow, DividerOrientation::FixedHigh] {
        let cal = ThermistorCal {
            orientation,
            ..ThermistorCal::default()
        };
        println!("{orientation:?}");
        println!("  code     volts     ohms        degC");
        for code in [4000i16, 8000, 12000, 16000, 20000, 24000] {
            let v = adc_code_to_voltage(code, full_scale);
            match divider_to_resistance(v, &cal) {
                Ok(r) => println!("  {code:>5}  {v:>8.4}  {r:>9.1}  {:>8.3}", resistance_to_temperature(r, &cal)),
                Err(e) => println!("  {code:>5}  {v:>8.4}  {e}"),
            }
        }
    }
    // Output at or above the supply rail is a wiring fault, not a temperature.
    let rail = (3.3 / 4.096 * 32768.0) as i16 + 10;
    println!("code {rail}: {:?}", thermistor_code_to_celsius(rail, full_scale, &ThermistorCal::default()));
}
