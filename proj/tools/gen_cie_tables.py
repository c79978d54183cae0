#!/usr/bin/env python3
# Copyright Contributors to the msfa-forge project.
# SPDX-License-Identifier: Apache-2.0
"""Regenerates include/msfa/cie_tables.hpp from the colour-science datasets.

    pip install colour-science
    python3 tools/gen_cie_tables.py > include/msfa/cie_tables.hpp
"""
import colour

START, STOP, STEP = 380, 780, 5

cmfs = colour.MSDS_CMFS["CIE 1931 2 Degree Standard Observer"]
d65 = colour.SDS_ILLUMINANTS["D65"]
wls = list(range(START, STOP + 1, STEP))

out = []
out.append("// Copyright Contributors to the msfa-forge project.")
out.append("// SPDX-License-Identifier: Apache-2.0")
out.append("// Generated by tools/gen_cie_tables.py (colour-science %s). Do not edit." % colour.__version__)
out.append("//")
out.append("// CIE 1931 2-degree standard observer colour matching functions and the CIE")
out.append("// D65 relative spectral power distribution, %d-%d nm at %d nm." % (START, STOP, STEP))
out.append("#pragma once")
out.append("")
out.append("#include <array>")
out.append("")
out.append("namespace msfa::cie {")
out.append("")
out.append("inline constexpr double kTableStartNm = %d.0;" % START)
out.append("inline constexpr double kTableStepNm = %d.0;" % STEP)
out.append("inline constexpr double kTableEndNm = %d.0;" % STOP)
out.append("inline constexpr int kTableVersion = 1;")
out.append("")
out.append("struct CmfSample {")
out.append("    double x, y, z;")
out.append("};")
out.append("")
out.append("inline constexpr std::array<CmfSample, %d> kCie1931Cmf{{" % len(wls))
for w in wls:
    x, y, z = cmfs[w]
    out.append("    {%.9g, %.9g, %.9g},  // %d" % (x, y, z, w))
out.append("}};")
out.append("")
out.append("inline constexpr std::array<double, %d> kD65{{" % len(wls))
for w in wls:
    out.append("    %.9g,  // %d" % (d65[w], w))
out.append("}};")
out.append("")
out.append("}  // namespace msfa::cie")
print("\n".join(out))
