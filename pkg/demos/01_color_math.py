"""Color math walkthrough: sRGB <-> CIELAB and perceptual distances.

All palette reasoning in this project happens in CIELAB, where
Euclidean-ish structure roughly matches perceived color difference,
and distances use CIEDE2000, which additionally corrects lightness,
chroma, and hue weighting.
"""

from palir.color import LabColor, SrgbColor, ciede2000, lab_to_srgb, srgb_to_lab

# Landmark conversions. White maps to L=100 exactly; black to the origin.
for color in [SrgbColor(255, 255, 255), SrgbColor(0, 0, 0), SrgbColor(255, 0, 0)]:
    lab = srgb_to_lab(color)
    print(f"{color.to_hex()} -> L={lab.L:7.3f} a={lab.a:8.3f} b={lab.b:8.3f}")

# Round trips are lossless for in-gamut colors (up to 1/255 per channel).
mauve = SrgbColor(0xde, 0x8f, 0xfc)
print(f"\nround trip {mauve.to_hex()} -> {lab_to_srgb(srgb_to_lab(mauve)).to_hex()}")

# Two pale pinks look close; pink vs teal does not. CIEDE2000 units are
# "just noticeable difference"-ish: ~1 is barely visible, ~20+ is a
# clearly different color.
pink_a = srgb_to_lab(SrgbColor(255, 211, 229))
pink_b = srgb_to_lab(SrgbColor(255, 200, 221))
teal = srgb_to_lab(SrgbColor(178, 247, 225))
print(f"\npale pink vs pale pink: dE00 = {ciede2000(pink_a, pink_b):6.2f}")
print(f"pale pink vs teal:      dE00 = {ciede2000(pink_a, teal):6.2f}")

# The formula's hue-rotation term matters most in the blue region; this
# pair is the classic standard-table example.
d = ciede2000(LabColor(50.0, 2.6772, -79.7751), LabColor(50.0, 0.0, -82.7485))
print(f"\nstandard blue pair:     dE00 = {d:.4f} (published: 2.0425)")
