#pragma once

// Generated from the published scaling data tables; do not edit by hand.

#include <array>

namespace scalelaw::fixture_data {

inline constexpr std::array<double, 182> llm_trivariate_x1 = {
    4000000000.0, 4000000000.0, 4000000000.0, 9000000000.0, 11000000000.0, 14000000000.0,
    18000000000.0, 28000000000.0, 55000000000.0, 12000000000.0, 12000000000.0, 12000000000.0,
    12000000000.0, 12000000000.0, 17000000000.0, 21000000000.0, 28000000000.0, 42000000000.0,
    84000000000.0, 13000000000.0, 25000000000.0, 35000000000.0, 44000000000.0, 58000000000.0,
    88000000000.0, 178000000000.0, 100000000.0, 100000000.0, 100000000.0, 100000000.0,
    400000000.0, 400000000.0, 100000000.0, 100000000.0, 100000000.0, 100000000.0,
    100000000.0, 100000000.0, 100000000.0, 100000000.0, 100000000.0, 100000000.0,
    100000000.0, 100000000.0, 100000000.0, 100000000.0, 100000000.0, 100000000.0,
    100000000.0, 100000000.0, 100000000.0, 100000000.0, 100000000.0, 100000000.0,
    100000000.0, 100000000.0, 100000000.0, 100000000.0, 100000000.0, 100000000.0,
    1500000000.0, 1500000000.0, 1500000000.0, 400000000.0, 100000000.0, 2700000000.0,
    1500000000.0, 400000000.0, 100000000.0, 100000000.0, 3900000000.0, 1500000000.0,
    400000000.0, 100000000.0, 100000000.0, 100000000.0, 100000000.0, 100000000.0,
    5900000000.0, 1500000000.0, 400000000.0, 100000000.0, 100000000.0, 100000000.0,
    100000000.0, 100000000.0, 400000000.0, 7500000000.0, 1500000000.0, 400000000.0,
    100000000.0, 100000000.0, 100000000.0, 100000000.0, 100000000.0, 14000000000.0,
    1500000000.0, 400000000.0, 100000000.0, 400000000.0, 400000000.0, 400000000.0,
    100000000.0, 100000000.0, 100000000.0, 100000000.0, 100000000.0, 100000000.0,
    100000000.0, 100000000.0, 100000000.0, 100000000.0, 20000000000.0, 1500000000.0,
    400000000.0, 100000000.0, 100000000.0, 100000000.0, 100000000.0, 100000000.0,
    100000000.0, 100000000.0, 100000000.0, 100000000.0, 100000000.0, 100000000.0,
    100000000.0, 100000000.0, 4800000000.0, 1500000000.0, 400000000.0, 8800000000.0,
    4800000000.0, 1500000000.0, 400000000.0, 12000000000.0, 4800000000.0, 1500000000.0,
    400000000.0, 22000000000.0, 4800000000.0, 1500000000.0, 400000000.0, 400000000.0,
    400000000.0, 32000000000.0, 4800000000.0, 1500000000.0, 400000000.0, 100000000.0,
    400000000.0, 400000000.0, 1500000000.0, 1500000000.0, 60000000000.0, 4800000000.0,
    1500000000.0, 400000000.0, 400000000.0, 400000000.0, 400000000.0, 26000000000.0,
    12000000000.0, 36000000000.0, 12000000000.0, 46000000000.0, 12000000000.0, 1500000000.0,
    66000000000.0, 12000000000.0, 91000000000.0, 12000000000.0, 174000000000.0, 12000000000.0,
    1500000000.0, 400000000.0, 1500000000.0, 1500000000.0, 1500000000.0, 1500000000.0,
    1500000000.0, 1500000000.0,
};

inline constexpr std::array<double, 182> llm_trivariate_x2 = {
    2810000000.0, 2810000000.0, 2810000000.0, 2810000000.0, 2810000000.0, 2810000000.0,
    2810000000.0, 2810000000.0, 2810000000.0, 4246500000.0, 4246500000.0, 4246500000.0,
    4246500000.0, 4246500000.0, 4246500000.0, 4246500000.0, 4246500000.0, 4246500000.0,
    4246500000.0, 8670000000.0, 8670000000.0, 8670000000.0, 8670000000.0, 8670000000.0,
    8670000000.0, 8670000000.0, 7098752.0, 7098752.0, 1096300000.0, 14100000.0,
    19703712.0, 35500000.0, 35500000.0, 35500000.0, 35500000.0, 14100000.0,
    14100000.0, 14100000.0, 14100000.0, 14100000.0, 14100000.0, 14100000.0,
    14100000.0, 14100000.0, 14100000.0, 14100000.0, 14100000.0, 14100000.0,
    44000000.0, 44000000.0, 44000000.0, 44000000.0, 44000000.0, 44000000.0,
    44000000.0, 44000000.0, 44000000.0, 44000000.0, 44000000.0, 44000000.0,
    82700000.0, 201236224.0, 1096300000.0, 1096300000.0, 1096300000.0, 618700000.0,
    618700000.0, 618700000.0, 618700000.0, 618700000.0, 421200000.0, 421200000.0,
    421200000.0, 421200000.0, 421200000.0, 421200000.0, 421200000.0, 421200000.0,
    281000000.0, 281000000.0, 281000000.0, 281000000.0, 281000000.0, 281000000.0,
    281000000.0, 281000000.0, 281000000.0, 220500000.0, 220500000.0, 220500000.0,
    220500000.0, 220500000.0, 220500000.0, 220500000.0, 220500000.0, 146500000.0,
    146500000.0, 146500000.0, 146500000.0, 146500000.0, 146500000.0, 146500000.0,
    146500000.0, 146500000.0, 146500000.0, 146500000.0, 146500000.0, 146500000.0,
    146500000.0, 146500000.0, 146500000.0, 146500000.0, 82700000.0, 82700000.0,
    82700000.0, 82700000.0, 82700000.0, 82700000.0, 82700000.0, 82700000.0,
    82700000.0, 82700000.0, 82700000.0, 82700000.0, 82700000.0, 82700000.0,
    82700000.0, 82700000.0, 2810000000.0, 2810000000.0, 2810000000.0, 1517300000.0,
    1517300000.0, 1517300000.0, 1517300000.0, 1096300000.0, 1096300000.0, 1096300000.0,
    1096300000.0, 618700000.0, 618700000.0, 618700000.0, 618700000.0, 618700000.0,
    618700000.0, 421200000.0, 421200000.0, 421200000.0, 421200000.0, 421200000.0,
    421200000.0, 421200000.0, 421200000.0, 421200000.0, 220500000.0, 220500000.0,
    220500000.0, 220500000.0, 220500000.0, 220500000.0, 220500000.0, 3899710720.0,
    3899710720.0, 2810000000.0, 2810000000.0, 2160013824.0, 2160013824.0, 2160013824.0,
    1517300000.0, 1517300000.0, 1096300000.0, 1096300000.0, 573700000.0, 573700000.0,
    573700000.0, 573700000.0, 220500000.0, 220500000.0, 573700000.0, 573700000.0,
    1096300000.0, 1517300000.0,
};

inline constexpr std::array<double, 182> llm_trivariate_x3 = {
    32000000000.0, 40000000000.0, 55000000000.0, 55000000000.0, 55000000000.0, 55000000000.0,
    55000000000.0, 55000000000.0, 55000000000.0, 36000000000.0, 48000000000.0, 60000000000.0,
    72000000000.0, 84000000000.0, 84000000000.0, 84000000000.0, 84000000000.0, 84000000000.0,
    84000000000.0, 178000000000.0, 178000000000.0, 178000000000.0, 178000000000.0, 178000000000.0,
    178000000000.0, 178000000000.0, 100000000.0, 200000000.0, 100000000.0, 100000000.0,
    400000000.0, 400000000.0, 200000000.0, 400000000.0, 800000000.0, 200000000.0,
    400000000.0, 800000000.0, 1500000000.0, 2700000000.0, 3900000000.0, 5900000000.0,
    14000000000.0, 20000000000.0, 91000000000.0, 174000000000.0, 600000000000.0, 900000000000.0,
    200000000.0, 400000000.0, 1500000000.0, 2700000000.0, 3900000000.0, 5900000000.0,
    7500000000.0, 14000000000.0, 20000000000.0, 32000000000.0, 91000000000.0, 174000000000.0,
    1500000000.0, 1500000000.0, 1500000000.0, 1500000000.0, 1500000000.0, 2700000000.0,
    2700000000.0, 2700000000.0, 2700000000.0, 1500000000.0, 3900000000.0, 3900000000.0,
    3900000000.0, 3900000000.0, 1500000000.0, 2700000000.0, 5900000000.0, 7500000000.0,
    5900000000.0, 5900000000.0, 5900000000.0, 5900000000.0, 1500000000.0, 2700000000.0,
    3900000000.0, 7500000000.0, 91000000000.0, 7500000000.0, 7500000000.0, 7500000000.0,
    7500000000.0, 1500000000.0, 2700000000.0, 3900000000.0, 5900000000.0, 14000000000.0,
    14000000000.0, 14000000000.0, 14000000000.0, 60000000000.0, 91000000000.0, 174000000000.0,
    1500000000.0, 2700000000.0, 3900000000.0, 5900000000.0, 7500000000.0, 20000000000.0,
    32000000000.0, 60000000000.0, 91000000000.0, 174000000000.0, 20000000000.0, 20000000000.0,
    20000000000.0, 20000000000.0, 400000000.0, 1500000000.0, 2700000000.0, 3900000000.0,
    5900000000.0, 7500000000.0, 14000000000.0, 32000000000.0, 60000000000.0, 91000000000.0,
    174000000000.0, 300000000000.0, 4800000000.0, 4800000000.0, 4800000000.0, 8800000000.0,
    8800000000.0, 8800000000.0, 8800000000.0, 12000000000.0, 12000000000.0, 12000000000.0,
    12000000000.0, 22000000000.0, 22000000000.0, 22000000000.0, 22000000000.0, 60000000000.0,
    91000000000.0, 32000000000.0, 32000000000.0, 32000000000.0, 32000000000.0, 32000000000.0,
    60000000000.0, 91000000000.0, 91000000000.0, 250000000000.0, 60000000000.0, 60000000000.0,
    60000000000.0, 60000000000.0, 3900000000.0, 32000000000.0, 300000000000.0, 26000000000.0,
    26000000000.0, 36000000000.0, 36000000000.0, 46000000000.0, 46000000000.0, 46000000000.0,
    66000000000.0, 66000000000.0, 91000000000.0, 91000000000.0, 174000000000.0, 174000000000.0,
    174000000000.0, 174000000000.0, 300000000000.0, 600000000000.0, 300000000000.0, 600000000000.0,
    174000000000.0, 91000000000.0,
};

inline constexpr std::array<double, 182> llm_trivariate_y = {
    2.722962, 2.706547, 2.696432, 2.611045, 2.598793, 2.589427,
    2.584592, 2.579361, 2.574117, 2.618343, 2.577519, 2.56039,
    2.539524, 2.526961, 2.48506, 2.471375, 2.467156, 2.470016,
    2.45653, 2.451606, 2.376484, 2.360029, 2.351177, 2.348107,
    2.337275, 2.336741, 8.102005, 7.36236, 6.611002, 7.278144,
    6.096268, 5.79413, 6.252892, 5.799587, 5.284175, 6.664138,
    6.273184, 5.816824, 5.364749, 4.992776, 4.741132, 4.546227,
    4.383392, 4.51041, 4.396074, 4.359691, 4.331469, 4.304018,
    6.18997, 5.648868, 4.387672, 4.113597, 3.988205, 3.89434,
    3.854261, 3.807672, 3.92903, 3.89224, 3.8362, 3.812315,
    4.36208, 3.929866, 3.680017, 3.704141, 3.819042, 3.415532,
    3.409955, 3.449187, 3.829336, 3.784308, 3.348126, 3.35496,
    3.404755, 3.89862, 3.797898, 3.747371, 4.169935, 4.376178,
    3.319542, 3.330755, 3.386692, 3.882211, 3.877228, 3.72759,
    3.754965, 3.99341, 3.312059, 3.310159, 3.325092, 3.374362,
    3.848433, 3.932167, 3.752793, 3.721901, 3.78097, 3.319729,
    3.334061, 3.390927, 3.801428, 3.34025, 3.311519, 3.277013,
    4.033501, 3.80764, 3.732758, 3.718068, 3.735044, 3.756257,
    3.793078, 3.846421, 3.862952, 3.897418, 3.608018, 3.618937,
    3.651057, 3.790125, 5.488318, 4.20696, 3.953894, 3.844048,
    3.774708, 3.747734, 3.725231, 3.747091, 3.747091, 3.743505,
    3.734349, 3.868704, 3.236253, 3.244249, 3.378791, 3.022525,
    3.022745, 3.070052, 3.479142, 2.925644, 2.927054, 2.996886,
    3.547616, 2.900172, 2.912009, 2.973545, 3.441785, 3.688865,
    3.756154, 2.912103, 2.926206, 2.980892, 3.366502, 5.783605,
    3.431953, 3.465185, 2.917592, 2.890927, 2.981407, 2.993185,
    3.032319, 3.258704, 3.525297, 3.260515, 3.257426, 2.916993,
    2.947956, 2.618932, 2.636968, 2.603919, 2.638341, 3.029574,
    2.592968, 2.626113, 2.636805, 2.665932, 2.708514, 2.738098,
    2.895393, 3.752652, 2.958765, 2.937761, 2.881076, 2.863888,
    2.974257, 3.034805,
};

inline constexpr std::array<double, 535> imagenet_mix_b16_x1 = {
    12000.0, 13000.0, 14000.0, 16000.0, 18000.0, 19000.0,
    21000.0, 24000.0, 26000.0, 29000.0, 32000.0, 35000.0,
    39000.0, 43000.0, 47000.0, 52000.0, 57000.0, 63000.0,
    70000.0, 77000.0, 85000.0, 94000.0, 104000.0, 114000.0,
    126000.0, 139000.0, 154000.0, 170000.0, 187000.0, 207000.0,
    228000.0, 252000.0, 278000.0, 307000.0, 339000.0, 374000.0,
    12000.0, 13000.0, 14000.0, 16000.0, 18000.0, 19000.0,
    21000.0, 24000.0, 26000.0, 29000.0, 32000.0, 35000.0,
    39000.0, 43000.0, 47000.0, 52000.0, 57000.0, 63000.0,
    70000.0, 77000.0, 85000.0, 95000.0, 105000.0, 115000.0,
    127000.0, 140000.0, 155000.0, 171000.0, 188000.0, 208000.0,
    229000.0, 254000.0, 280000.0, 309000.0, 341000.0, 376000.0,
    12000.0, 13000.0, 14000.0, 16000.0, 18000.0, 19000.0,
    21000.0, 24000.0, 26000.0, 29000.0, 32000.0, 35000.0,
    39000.0, 43000.0, 47000.0, 52000.0, 57000.0, 63000.0,
    70000.0, 77000.0, 85000.0, 94000.0, 104000.0, 114000.0,
    126000.0, 139000.0, 154000.0, 171000.0, 188000.0, 208000.0,
    229000.0, 253000.0, 279000.0, 308000.0, 340000.0, 375000.0,
    12000.0, 13000.0, 14000.0, 16000.0, 18000.0, 19000.0,
    22000.0, 25000.0, 27000.0, 30000.0, 33000.0, 36000.0,
    40000.0, 44000.0, 48000.0, 53000.0, 58000.0, 64000.0,
    71000.0, 78000.0, 86000.0, 95000.0, 105000.0, 115000.0,
    127000.0, 140000.0, 155000.0, 171000.0, 188000.0, 208000.0,
    229000.0, 253000.0, 279000.0, 308000.0, 340000.0, 375000.0,
    12000.0, 13000.0, 14000.0, 16000.0, 18000.0, 19000.0,
    21000.0, 24000.0, 26000.0, 29000.0, 32000.0, 35000.0,
    39000.0, 43000.0, 47000.0, 52000.0, 57000.0, 63000.0,
    70000.0, 77000.0, 85000.0, 94000.0, 104000.0, 114000.0,
    126000.0, 139000.0, 154000.0, 170000.0, 187000.0, 207000.0,
    228000.0, 252000.0, 278000.0, 307000.0, 12000.0, 13000.0,
    14000.0, 16000.0, 18000.0, 19000.0, 21000.0, 24000.0,
    26000.0, 29000.0, 33000.0, 36000.0, 40000.0, 44000.0,
    48000.0, 53000.0, 58000.0, 64000.0, 71000.0, 78000.0,
    86000.0, 95000.0, 105000.0, 115000.0, 127000.0, 140000.0,
    155000.0, 171000.0, 188000.0, 208000.0, 229000.0, 253000.0,
    279000.0, 308000.0, 12000.0, 13000.0, 14000.0, 16000.0,
    18000.0, 19000.0, 21000.0, 24000.0, 26000.0, 29000.0,
    32000.0, 35000.0, 39000.0, 43000.0, 47000.0, 52000.0,
    57000.0, 63000.0, 70000.0, 77000.0, 85000.0, 94000.0,
    104000.0, 114000.0, 126000.0, 139000.0, 154000.0, 170000.0,
    187000.0, 207000.0, 228000.0, 252000.0, 278000.0, 307000.0,
    339000.0, 12000.0, 13000.0, 14000.0, 16000.0, 18000.0,
    19000.0, 21000.0, 24000.0, 26000.0, 29000.0, 32000.0,
    35000.0, 39000.0, 43000.0, 47000.0, 52000.0, 57000.0,
    63000.0, 70000.0, 77000.0, 85000.0, 94000.0, 104000.0,
    114000.0, 126000.0, 139000.0, 154000.0, 170000.0, 187000.0,
    207000.0, 228000.0, 252000.0, 278000.0, 307000.0, 339000.0,
    374000.0, 12000.0, 13000.0, 14000.0, 16000.0, 18000.0,
    19000.0, 21000.0, 24000.0, 26000.0, 29000.0, 32000.0,
    35000.0, 39000.0, 43000.0, 47000.0, 52000.0, 57000.0,
    63000.0, 70000.0, 77000.0, 85000.0, 94000.0, 104000.0,
    114000.0, 126000.0, 139000.0, 154000.0, 170000.0, 187000.0,
    207000.0, 228000.0, 252000.0, 278000.0, 307000.0, 339000.0,
    374000.0, 12000.0, 13000.0, 14000.0, 16000.0, 18000.0,
    19000.0, 21000.0, 24000.0, 26000.0, 29000.0, 32000.0,
    35000.0, 39000.0, 43000.0, 47000.0, 52000.0, 57000.0,
    63000.0, 70000.0, 77000.0, 85000.0, 94000.0, 104000.0,
    114000.0, 126000.0, 139000.0, 154000.0, 170000.0, 187000.0,
    207000.0, 228000.0, 252000.0, 278000.0, 307000.0, 339000.0,
    374000.0, 12000.0, 13000.0, 14000.0, 16000.0, 18000.0,
    19000.0, 21000.0, 24000.0, 26000.0, 29000.0, 32000.0,
    35000.0, 39000.0, 43000.0, 47000.0, 52000.0, 57000.0,
    63000.0, 70000.0, 77000.0, 85000.0, 94000.0, 104000.0,
    114000.0, 126000.0, 139000.0, 154000.0, 170000.0, 187000.0,
    207000.0, 228000.0, 252000.0, 278000.0, 308000.0, 340000.0,
    375000.0, 12000.0, 13000.0, 14000.0, 16000.0, 18000.0,
    19000.0, 21000.0, 24000.0, 26000.0, 29000.0, 32000.0,
    35000.0, 39000.0, 43000.0, 47000.0, 52000.0, 57000.0,
    63000.0, 70000.0, 77000.0, 85000.0, 94000.0, 104000.0,
    114000.0, 126000.0, 139000.0, 154000.0, 170000.0, 187000.0,
    207000.0, 228000.0, 252000.0, 278000.0, 307000.0, 339000.0,
    374000.0, 12000.0, 13000.0, 14000.0, 16000.0, 18000.0,
    19000.0, 21000.0, 24000.0, 26000.0, 29000.0, 32000.0,
    35000.0, 39000.0, 43000.0, 47000.0, 52000.0, 57000.0,
    63000.0, 70000.0, 77000.0, 85000.0, 94000.0, 104000.0,
    114000.0, 126000.0, 139000.0, 154000.0, 170000.0, 187000.0,
    207000.0, 228000.0, 252000.0, 278000.0, 307000.0, 339000.0,
    374000.0, 12000.0, 13000.0, 14000.0, 16000.0, 18000.0,
    19000.0, 21000.0, 24000.0, 26000.0, 29000.0, 32000.0,
    35000.0, 39000.0, 43000.0, 47000.0, 52000.0, 57000.0,
    63000.0, 70000.0, 77000.0, 85000.0, 94000.0, 104000.0,
    114000.0, 126000.0, 139000.0, 154000.0, 170000.0, 187000.0,
    207000.0, 228000.0, 252000.0, 278000.0, 307000.0, 339000.0,
    374000.0, 12000.0, 13000.0, 14000.0, 16000.0, 18000.0,
    19000.0, 21000.0, 24000.0, 26000.0, 29000.0, 32000.0,
    35000.0, 39000.0, 43000.0, 47000.0, 52000.0, 57000.0,
    63000.0, 70000.0, 77000.0, 85000.0, 94000.0, 104000.0,
    114000.0, 126000.0, 139000.0, 154000.0, 170000.0, 187000.0,
    207000.0, 228000.0, 252000.0, 278000.0, 307000.0, 339000.0,
    374000.0,
};

inline constexpr std::array<double, 535> imagenet_mix_b16_x2 = {
    77824.0, 77824.0, 77824.0, 77824.0, 77824.0, 77824.0,
    77824.0, 77824.0, 77824.0, 77824.0, 77824.0, 77824.0,
    77824.0, 77824.0, 77824.0, 77824.0, 77824.0, 77824.0,
    77824.0, 77824.0, 77824.0, 77824.0, 77824.0, 77824.0,
    77824.0, 77824.0, 77824.0, 77824.0, 77824.0, 77824.0,
    77824.0, 77824.0, 77824.0, 77824.0, 77824.0, 77824.0,
    116736.0, 116736.0, 116736.0, 116736.0, 116736.0, 116736.0,
    116736.0, 116736.0, 116736.0, 116736.0, 116736.0, 116736.0,
    116736.0, 116736.0, 116736.0, 116736.0, 116736.0, 116736.0,
    116736.0, 116736.0, 116736.0, 116736.0, 116736.0, 116736.0,
    116736.0, 116736.0, 116736.0, 116736.0, 116736.0, 116736.0,
    116736.0, 116736.0, 116736.0, 116736.0, 116736.0, 116736.0,
    175104.0, 175104.0, 175104.0, 175104.0, 175104.0, 175104.0,
    175104.0, 175104.0, 175104.0, 175104.0, 175104.0, 175104.0,
    175104.0, 175104.0, 175104.0, 175104.0, 175104.0, 175104.0,
    175104.0, 175104.0, 175104.0, 175104.0, 175104.0, 175104.0,
    175104.0, 175104.0, 175104.0, 175104.0, 175104.0, 175104.0,
    175104.0, 175104.0, 175104.0, 175104.0, 175104.0, 175104.0,
    262144.0, 262144.0, 262144.0, 262144.0, 262144.0, 262144.0,
    262144.0, 262144.0, 262144.0, 262144.0, 262144.0, 262144.0,
    262144.0, 262144.0, 262144.0, 262144.0, 262144.0, 262144.0,
    262144.0, 262144.0, 262144.0, 262144.0, 262144.0, 262144.0,
    262144.0, 262144.0, 262144.0, 262144.0, 262144.0, 262144.0,
    262144.0, 262144.0, 262144.0, 262144.0, 262144.0, 262144.0,
    393216.0, 393216.0, 393216.0, 393216.0, 393216.0, 393216.0,
    393216.0, 393216.0, 393216.0, 393216.0, 393216.0, 393216.0,
    393216.0, 393216.0, 393216.0, 393216.0, 393216.0, 393216.0,
    393216.0, 393216.0, 393216.0, 393216.0, 393216.0, 393216.0,
    393216.0, 393216.0, 393216.0, 393216.0, 393216.0, 393216.0,
    393216.0, 393216.0, 393216.0, 393216.0, 589824.0, 589824.0,
    589824.0, 589824.0, 589824.0, 589824.0, 589824.0, 589824.0,
    589824.0, 589824.0, 589824.0, 589824.0, 589824.0, 589824.0,
    589824.0, 589824.0, 589824.0, 589824.0, 589824.0, 589824.0,
    589824.0, 589824.0, 589824.0, 589824.0, 589824.0, 589824.0,
    589824.0, 589824.0, 589824.0, 589824.0, 589824.0, 589824.0,
    589824.0, 589824.0, 884736.0, 884736.0, 884736.0, 884736.0,
    884736.0, 884736.0, 884736.0, 884736.0, 884736.0, 884736.0,
    884736.0, 884736.0, 884736.0, 884736.0, 884736.0, 884736.0,
    884736.0, 884736.0, 884736.0, 884736.0, 884736.0, 884736.0,
    884736.0, 884736.0, 884736.0, 884736.0, 884736.0, 884736.0,
    884736.0, 884736.0, 884736.0, 884736.0, 884736.0, 884736.0,
    884736.0, 1769472.0, 1769472.0, 1769472.0, 1769472.0, 1769472.0,
    1769472.0, 1769472.0, 1769472.0, 1769472.0, 1769472.0, 1769472.0,
    1769472.0, 1769472.0, 1769472.0, 1769472.0, 1769472.0, 1769472.0,
    1769472.0, 1769472.0, 1769472.0, 1769472.0, 1769472.0, 1769472.0,
    1769472.0, 1769472.0, 1769472.0, 1769472.0, 1769472.0, 1769472.0,
    1769472.0, 1769472.0, 1769472.0, 1769472.0, 1769472.0, 1769472.0,
    1769472.0, 12845721.0, 12845721.0, 12845721.0, 12845721.0, 12845721.0,
    12845721.0, 12845721.0, 12845721.0, 12845721.0, 12845721.0, 12845721.0,
    12845721.0, 12845721.0, 12845721.0, 12845721.0, 12845721.0, 12845721.0,
    12845721.0, 12845721.0, 12845721.0, 12845721.0, 12845721.0, 12845721.0,
    12845721.0, 12845721.0, 12845721.0, 12845721.0, 12845721.0, 12845721.0,
    12845721.0, 12845721.0, 12845721.0, 12845721.0, 12845721.0, 12845721.0,
    12845721.0, 50000000.0, 50000000.0, 50000000.0, 50000000.0, 50000000.0,
    50000000.0, 50000000.0, 50000000.0, 50000000.0, 50000000.0, 50000000.0,
    50000000.0, 50000000.0, 50000000.0, 50000000.0, 50000000.0, 50000000.0,
    50000000.0, 50000000.0, 50000000.0, 50000000.0, 50000000.0, 50000000.0,
    50000000.0, 50000000.0, 50000000.0, 50000000.0, 50000000.0, 50000000.0,
    50000000.0, 50000000.0, 50000000.0, 50000000.0, 50000000.0, 50000000.0,
    50000000.0, 100000000.0, 100000000.0, 100000000.0, 100000000.0, 100000000.0,
    100000000.0, 100000000.0, 100000000.0, 100000000.0, 100000000.0, 100000000.0,
    100000000.0, 100000000.0, 100000000.0, 100000000.0, 100000000.0, 100000000.0,
    100000000.0, 100000000.0, 100000000.0, 100000000.0, 100000000.0, 100000000.0,
    100000000.0, 100000000.0, 100000000.0, 100000000.0, 100000000.0, 100000000.0,
    100000000.0, 100000000.0, 100000000.0, 100000000.0, 100000000.0, 100000000.0,
    100000000.0, 150000000.0, 150000000.0, 150000000.0, 150000000.0, 150000000.0,
    150000000.0, 150000000.0, 150000000.0, 150000000.0, 150000000.0, 150000000.0,
    150000000.0, 150000000.0, 150000000.0, 150000000.0, 150000000.0, 150000000.0,
    150000000.0, 150000000.0, 150000000.0, 150000000.0, 150000000.0, 150000000.0,
    150000000.0, 150000000.0, 150000000.0, 150000000.0, 150000000.0, 150000000.0,
    150000000.0, 150000000.0, 150000000.0, 150000000.0, 150000000.0, 150000000.0,
    150000000.0, 200000000.0, 200000000.0, 200000000.0, 200000000.0, 200000000.0,
    200000000.0, 200000000.0, 200000000.0, 200000000.0, 200000000.0, 200000000.0,
    200000000.0, 200000000.0, 200000000.0, 200000000.0, 200000000.0, 200000000.0,
    200000000.0, 200000000.0, 200000000.0, 200000000.0, 200000000.0, 200000000.0,
    200000000.0, 200000000.0, 200000000.0, 200000000.0, 200000000.0, 200000000.0,
    200000000.0, 200000000.0, 200000000.0, 200000000.0, 200000000.0, 200000000.0,
    200000000.0, 250000000.0, 250000000.0, 250000000.0, 250000000.0, 250000000.0,
    250000000.0, 250000000.0, 250000000.0, 250000000.0, 250000000.0, 250000000.0,
    250000000.0, 250000000.0, 250000000.0, 250000000.0, 250000000.0, 250000000.0,
    250000000.0, 250000000.0, 250000000.0, 250000000.0, 250000000.0, 250000000.0,
    250000000.0, 250000000.0, 250000000.0, 250000000.0, 250000000.0, 250000000.0,
    250000000.0, 250000000.0, 250000000.0, 250000000.0, 250000000.0, 250000000.0,
    250000000.0, 300000000.0, 300000000.0, 300000000.0, 300000000.0, 300000000.0,
    300000000.0, 300000000.0, 300000000.0, 300000000.0, 300000000.0, 300000000.0,
    300000000.0, 300000000.0, 300000000.0, 300000000.0, 300000000.0, 300000000.0,
    300000000.0, 300000000.0, 300000000.0, 300000000.0, 300000000.0, 300000000.0,
    300000000.0, 300000000.0, 300000000.0, 300000000.0, 300000000.0, 300000000.0,
    300000000.0, 300000000.0, 300000000.0, 300000000.0, 300000000.0, 300000000.0,
    300000000.0,
};

inline constexpr std::array<double, 535> imagenet_mix_b16_y = {
    0.9468800016000001, 0.9453600012000001, 0.9475400001000001, 0.9465200007000001, 0.9446600005, 0.9470600002,
    0.9458799995, 0.9472000003000001, 0.9476400018000001, 0.9453600012000001, 0.9438400008000001, 0.9482400008,
    0.9420800023, 0.9439400025, 0.9453400001000001, 0.9397000000000001, 0.9431800023, 0.9402200021,
    0.9398600012, 0.9428599998, 0.9400399998000001, 0.9401600026, 0.9425800033, 0.9422800019,
    0.9384599999000001, 0.9385600016000001, 0.9422800019, 0.9387600012, 0.9414000027, 0.9428400025,
    0.940200001, 0.9409400001, 0.9390000030000001, 0.9394000024, 0.9381600022000001, 0.938500002,
    0.9412200004000001, 0.9402800016, 0.9406400025, 0.9359600022000001, 0.9404600002, 0.9421600029,
    0.9387200028, 0.9411600009000001, 0.9392800033, 0.939600002, 0.9386200011, 0.9384599999000001,
    0.9372600019, 0.938000001, 0.9384599999000001, 0.9390400015, 0.9384599999000001, 0.9412400015000001,
    0.9410800003, 0.9353200048, 0.9393400028000001, 0.9349400029, 0.9375200011, 0.9381800033000001,
    0.9349400029, 0.9357400015, 0.934360005, 0.9357200041, 0.9415600002000001, 0.9343400002000001,
    0.9341600016, 0.931280002, 0.9336000010000001, 0.9288799986, 0.9322800040000001, 0.9340400025000001,
    0.9314000010000001, 0.9337200001, 0.9328000024, 0.9313800037000001, 0.9328400046, 0.9345400035,
    0.9332000017000001, 0.9345600009, 0.9301199988000001, 0.9338000044, 0.9345199987, 0.9351399988,
    0.9323400036, 0.9357400015, 0.9326599985, 0.9314800054000001, 0.9366200045, 0.9322400019,
    0.9291200042000001, 0.9354400039, 0.9301000014, 0.9310600013, 0.9294800013000001, 0.9336199984,
    0.9295200035000001, 0.9301600009000001, 0.9289000034, 0.9311399981, 0.928960003, 0.9290800020000001,
    0.9261600003, 0.9294600040000001, 0.9258400053, 0.9280200005, 0.9291599989, 0.9315799996,
    0.9232200012, 0.9225400016, 0.920979999, 0.9200199991, 0.9213199988, 0.9239000008,
    0.9186400026, 0.9236200005, 0.9224600047, 0.920660004, 0.9222199991000001, 0.9222400039,
    0.9224200025, 0.9214800000000001, 0.9199400023000001, 0.9254800007, 0.9210000038, 0.9220200032,
    0.9230000004000001, 0.9205400050000001, 0.9240000024, 0.9231199995, 0.9207400009000001, 0.9209199995,
    0.9238400012, 0.9201200008, 0.9234599993, 0.9219000041000001, 0.9211400002000001, 0.9200400040000001,
    0.9219600037000001, 0.9220200032, 0.9228200018, 0.9209400043, 0.9152199998, 0.9221599996000001,
    0.9020600021, 0.9046600014, 0.9043600038, 0.9024000019, 0.9066600055, 0.9039399996,
    0.9049400017, 0.9057000056000001, 0.9045400023, 0.9051000029, 0.9068600014, 0.9075800031000001,
    0.9068400040000001, 0.9095200002, 0.9119400010000001, 0.9071800038000001, 0.9082600027000001, 0.9073200002,
    0.9054200053, 0.9087800011, 0.9059600011000001, 0.908040002, 0.9099600017, 0.90766,
    0.9071800038000001, 0.9059600011000001, 0.9056400061000001, 0.9077199996, 0.9101200029000001, 0.9048600048000001,
    0.9028000012, 0.9075600058000001, 0.905840002, 0.9104400054, 0.8812400028, 0.8769000024,
    0.8821400031000001, 0.8797200024, 0.8786400035, 0.8856000006, 0.8814600036, 0.8819999993000001,
    0.8852200061000001, 0.8850600049, 0.8815600052, 0.8803800046, 0.8845200017, 0.8832399994000001,
    0.8825200051000001, 0.8854399994000001, 0.8817600012000001, 0.8866799995, 0.8840800002, 0.8875400051000001,
    0.8882599995, 0.8919799998, 0.8845200017, 0.8862400055, 0.8871600032, 0.8825599998,
    0.8845800012, 0.8882599995, 0.8860200047000001, 0.8884000033, 0.8887000009, 0.8853400052,
    0.8845600039, 0.8883400038, 0.8384200037, 0.8409800082000001, 0.8425600082, 0.8434400111,
    0.8466999978, 0.8451199979, 0.8513600081, 0.8542800099000001, 0.8516000062, 0.8549000025,
    0.8536999971, 0.8490599990000001, 0.8544000089, 0.8593399972, 0.8602200001, 0.8616200089,
    0.8561200052, 0.8550599962000001, 0.855640009, 0.8580000103000001, 0.8622599989, 0.8556600064000001,
    0.8591600060000001, 0.8602399975, 0.8613000065, 0.8557400107, 0.8571999967, 0.8624600023000001,
    0.8606600016, 0.8594800085000001, 0.8612000048, 0.8569800109, 0.8653199971000001, 0.8593600094,
    0.8611800075, 0.752700001, 0.745480001, 0.7470999956000001, 0.7475599945, 0.7498199940000001,
    0.7548400015000001, 0.7580000013, 0.7639600039000001, 0.7731600106000001, 0.7685400099, 0.7747200131,
    0.780520007, 0.7807999998, 0.7841200083000001, 0.7819800079, 0.7829000056000001, 0.7864800096,
    0.7843400091, 0.7910600007, 0.7888600081, 0.7888000011, 0.7928600013, 0.7980800122,
    0.7940400094000001, 0.7908200026000001, 0.7940800041, 0.7927000076, 0.7947200090000001, 0.7947000116,
    0.8002000004, 0.8047400117, 0.8068599999, 0.8052800000000001, 0.8003600091, 0.7996000051000001,
    0.8032599986000001, 0.7100999951, 0.6930000186, 0.6851000190000001, 0.6584399939000001, 0.6373400092,
    0.6297399998000001, 0.6123400033, 0.5938400030000001, 0.5833000243, 0.5700800121, 0.5558000207,
    0.5479600132, 0.5351400077, 0.5248399973, 0.5177200139, 0.510800004, 0.5033000112,
    0.49437999730000004, 0.49106001850000003, 0.4827600121, 0.4779199958, 0.4746000171, 0.47251999380000004,
    0.46707999710000003, 0.4676200151, 0.47034001350000004, 0.4693400264, 0.4700199962, 0.4710000157,
    0.4719600081, 0.4747000337, 0.4745799899, 0.4787200093, 0.48155999180000003, 0.48655998710000004,
    0.49511998890000003, 0.7111999989000001, 0.6953400075, 0.6830800176, 0.6536999941, 0.6360400021,
    0.6323200166, 0.6112399995000001, 0.5901600122, 0.5810400248, 0.5657800138, 0.5536600053,
    0.5403999984, 0.5280800164, 0.5174800158, 0.5052400231, 0.4957399964, 0.48536002640000003,
    0.47584003210000003, 0.4645400047, 0.4597600102, 0.451480031, 0.4430199862, 0.4357200265,
    0.4305999875, 0.42192000150000003, 0.41430002450000003, 0.40454000230000003, 0.4001800418, 0.39741998910000004,
    0.39076000450000004, 0.3865799904, 0.380580008, 0.3752599955, 0.3713999987, 0.36746001240000004,
    0.36250001190000003, 0.7072400153, 0.6927399933, 0.6792800128, 0.6573400199, 0.6339600086,
    0.6228200197, 0.6073600054, 0.5886999965, 0.5793800056, 0.5607199967000001, 0.5493200123,
    0.5397199988, 0.5246400237000001, 0.5096000135000001, 0.4985200167, 0.4890400171, 0.483520031,
    0.4693000317, 0.46398001910000003, 0.451660037, 0.446960032, 0.43704003100000005, 0.4294199944,
    0.4234400392, 0.41809999940000003, 0.41122001410000003, 0.4042000175, 0.3986800313, 0.389959991,
    0.3852199912, 0.3820199966, 0.374720037, 0.36915999650000003, 0.3685200214, 0.3593200445,
    0.3581399918, 0.7078000009000001, 0.6887000203, 0.6784799993, 0.6534200013, 0.6328400075,
    0.6237600148, 0.6072600186, 0.5881000161000001, 0.5783400238, 0.5637000203, 0.5498000085,
    0.5362000167000001, 0.5257800221, 0.5147000253, 0.5023800135000001, 0.4920400381, 0.4848200083,
    0.47548002, 0.4647600055, 0.4529399872, 0.44517999890000004, 0.43494004010000004, 0.4260799885,
    0.41953998800000003, 0.41040003300000005, 0.4063200355, 0.3979800344, 0.3915799856, 0.3887000084,
    0.3842000365, 0.37696003910000003, 0.3715000153, 0.3680400252, 0.3602400422, 0.3571000099,
    0.35206002000000003, 0.7112600207, 0.6957200170000001, 0.6827999949, 0.6604399979000001, 0.6374600232000001,
    0.629640013, 0.6124400198000001, 0.5917400122, 0.5812399983000001, 0.5640600026, 0.5519600213,
    0.542840004, 0.5240800083, 0.5133600235, 0.5011800230000001, 0.49340003730000004, 0.48006004100000005,
    0.4709799886, 0.46202003960000004, 0.452639997, 0.4438800216, 0.4360800385, 0.42448002100000004,
    0.4201200008, 0.4143599868, 0.404399991, 0.3996800184, 0.3899800181, 0.3867999911,
    0.37814003230000004, 0.37507998940000004, 0.3676400185, 0.3636000156, 0.3574399948, 0.35269999500000004,
    0.3483000398, 0.7124000192000001, 0.6934400201, 0.6806000173, 0.6572400033, 0.6354400218,
    0.6240200102, 0.6135199964, 0.5918200016, 0.575819999, 0.5584000051, 0.5481400192,
    0.5354200006000001, 0.5264800191, 0.5113800168, 0.5032000244, 0.4897199869, 0.4806799889,
    0.47324001790000003, 0.46420001980000003, 0.454760015, 0.4474800229, 0.4367600083, 0.4273200035,
    0.4189800024, 0.41190004350000003, 0.4091799855, 0.40097999570000004, 0.3931000233, 0.3876200318,
    0.3788599968, 0.3740000129, 0.36981999870000004, 0.3649600148, 0.360740006, 0.3551999927,
    0.3528000116, 0.7074200213, 0.6914200187, 0.6810400188, 0.6536999941, 0.6334000230000001,
    0.6261599958, 0.6121000051000001, 0.5911599994, 0.5768200159, 0.563560009, 0.5514599979,
    0.5377400219, 0.5260000229, 0.5130000114000001, 0.5023000240000001, 0.491320014, 0.48294001820000004,
    0.47220003600000005, 0.4616200328, 0.4522399902, 0.44446003440000004, 0.4335800409, 0.4249200225,
    0.41997998950000004, 0.41408002380000003, 0.40904003380000004, 0.40096002820000004, 0.3950999975, 0.3882800341,
    0.38148003820000004, 0.37819999460000003, 0.37128001450000003, 0.3662599921, 0.36228001120000003, 0.35747998950000004,
    0.3524399996,
};

}  // namespace scalelaw::fixture_data
