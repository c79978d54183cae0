// Copyright Contributors to the msfa-forge project.
// SPDX-License-Identifier: Apache-2.0
// Generated by tools/gen_cie_tables.py (colour-science 0.4.6). Do not edit.
//
// CIE 1931 2-degree standard observer colour matching functions and the CIE
// D65 relative spectral power distribution, 380-780 nm at 5 nm.
#pragma once

#include <array>

namespace msfa::cie {

inline constexpr double kTableStartNm = 380.0;
inline constexpr double kTableStepNm = 5.0;
inline constexpr double kTableEndNm = 780.0;
inline constexpr int kTableVersion = 1;

struct CmfSample {
    double x, y, z;
};

inline constexpr std::array<CmfSample, 81> kCie1931Cmf{{
    {0.001368, 3.9e-05, 0.006450001},  // 380
    {0.002236, 6.4e-05, 0.01054999},  // 385
    {0.004243, 0.00012, 0.02005001},  // 390
    {0.00765, 0.000217, 0.03621},  // 395
    {0.01431, 0.000396, 0.06785001},  // 400
    {0.02319, 0.00064, 0.1102},  // 405
    {0.04351, 0.00121, 0.2074},  // 410
    {0.07763, 0.00218, 0.3713},  // 415
    {0.13438, 0.004, 0.6456},  // 420
    {0.21477, 0.0073, 1.0390501},  // 425
    {0.2839, 0.0116, 1.3856},  // 430
    {0.3285, 0.01684, 1.62296},  // 435
    {0.34828, 0.023, 1.74706},  // 440
    {0.34806, 0.0298, 1.7826},  // 445
    {0.3362, 0.038, 1.77211},  // 450
    {0.3187, 0.048, 1.7441},  // 455
    {0.2908, 0.06, 1.6692},  // 460
    {0.2511, 0.0739, 1.5281},  // 465
    {0.19536, 0.09098, 1.28764},  // 470
    {0.1421, 0.1126, 1.0419},  // 475
    {0.09564, 0.13902, 0.8129501},  // 480
    {0.05795001, 0.1693, 0.6162},  // 485
    {0.03201, 0.20802, 0.46518},  // 490
    {0.0147, 0.2586, 0.3533},  // 495
    {0.0049, 0.323, 0.272},  // 500
    {0.0024, 0.4073, 0.2123},  // 505
    {0.0093, 0.503, 0.1582},  // 510
    {0.0291, 0.6082, 0.1117},  // 515
    {0.06327, 0.71, 0.07824999},  // 520
    {0.1096, 0.7932, 0.05725001},  // 525
    {0.1655, 0.862, 0.04216},  // 530
    {0.2257499, 0.9148501, 0.02984},  // 535
    {0.2904, 0.954, 0.0203},  // 540
    {0.3597, 0.9803, 0.0134},  // 545
    {0.4334499, 0.9949501, 0.008749999},  // 550
    {0.5120501, 1, 0.005749999},  // 555
    {0.5945, 0.995, 0.0039},  // 560
    {0.6784, 0.9786, 0.002749999},  // 565
    {0.7621, 0.952, 0.0021},  // 570
    {0.8425, 0.9154, 0.0018},  // 575
    {0.9163, 0.87, 0.001650001},  // 580
    {0.9786, 0.8163, 0.0014},  // 585
    {1.0263, 0.757, 0.0011},  // 590
    {1.0567, 0.6949, 0.001},  // 595
    {1.0622, 0.631, 0.0008},  // 600
    {1.0456, 0.5668, 0.0006},  // 605
    {1.0026, 0.503, 0.00034},  // 610
    {0.9384, 0.4412, 0.00024},  // 615
    {0.8544499, 0.381, 0.00019},  // 620
    {0.7514, 0.321, 0.0001},  // 625
    {0.6424, 0.265, 4.999999e-05},  // 630
    {0.5419, 0.217, 3e-05},  // 635
    {0.4479, 0.175, 2e-05},  // 640
    {0.3608, 0.1382, 1e-05},  // 645
    {0.2835, 0.107, -1.90582413e-21},  // 650
    {0.2187, 0.0816, 0},  // 655
    {0.1649, 0.061, 0},  // 660
    {0.1212, 0.04458, 0},  // 665
    {0.0874, 0.032, 0},  // 670
    {0.0636, 0.0232, 0},  // 675
    {0.04677, 0.017, 0},  // 680
    {0.0329, 0.01192, 0},  // 685
    {0.0227, 0.00821, 0},  // 690
    {0.01584, 0.005723, 0},  // 695
    {0.01135916, 0.004102, 0},  // 700
    {0.008110916, 0.002929, 0},  // 705
    {0.005790346, 0.002091, 0},  // 710
    {0.004109457, 0.001484, 0},  // 715
    {0.002899327, 0.001047, 0},  // 720
    {0.00204919, 0.00074, 0},  // 725
    {0.001439971, 0.00052, 0},  // 730
    {0.0009999493, 0.0003611, 0},  // 735
    {0.0006900786, 0.0002492, 0},  // 740
    {0.0004760213, 0.0001719, 0},  // 745
    {0.0003323011, 0.00012, 0},  // 750
    {0.0002348261, 8.48e-05, 0},  // 755
    {0.0001661505, 6e-05, 0},  // 760
    {0.000117413, 4.24e-05, 0},  // 765
    {8.307527e-05, 3e-05, 0},  // 770
    {5.870652e-05, 2.12e-05, 0},  // 775
    {4.150994e-05, 1.499e-05, 0},  // 780
}};

inline constexpr std::array<double, 81> kD65{{
    49.9755,  // 380
    52.3118,  // 385
    54.6482,  // 390
    68.7015,  // 395
    82.7549,  // 400
    87.1204,  // 405
    91.486,  // 410
    92.4589,  // 415
    93.4318,  // 420
    90.057,  // 425
    86.6823,  // 430
    95.7736,  // 435
    104.865,  // 440
    110.936,  // 445
    117.008,  // 450
    117.41,  // 455
    117.812,  // 460
    116.336,  // 465
    114.861,  // 470
    115.392,  // 475
    115.923,  // 480
    112.367,  // 485
    108.811,  // 490
    109.082,  // 495
    109.354,  // 500
    108.578,  // 505
    107.802,  // 510
    106.296,  // 515
    104.79,  // 520
    106.239,  // 525
    107.689,  // 530
    106.047,  // 535
    104.405,  // 540
    104.225,  // 545
    104.046,  // 550
    102.023,  // 555
    100,  // 560
    98.1671,  // 565
    96.3342,  // 570
    96.0611,  // 575
    95.788,  // 580
    92.2368,  // 585
    88.6856,  // 590
    89.3459,  // 595
    90.0062,  // 600
    89.8026,  // 605
    89.5991,  // 610
    88.6489,  // 615
    87.6987,  // 620
    85.4936,  // 625
    83.2886,  // 630
    83.4939,  // 635
    83.6992,  // 640
    81.863,  // 645
    80.0268,  // 650
    80.1207,  // 655
    80.2146,  // 660
    81.2462,  // 665
    82.2778,  // 670
    80.281,  // 675
    78.2842,  // 680
    74.0027,  // 685
    69.7213,  // 690
    70.6652,  // 695
    71.6091,  // 700
    72.979,  // 705
    74.349,  // 710
    67.9765,  // 715
    61.604,  // 720
    65.7448,  // 725
    69.8856,  // 730
    72.4863,  // 735
    75.087,  // 740
    69.3398,  // 745
    63.5927,  // 750
    55.0054,  // 755
    46.4182,  // 760
    56.6118,  // 765
    66.8054,  // 770
    65.0941,  // 775
    63.3828,  // 780
}};

}  // namespace msfa::cie
