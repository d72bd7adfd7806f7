"""Rebuilds the label maps in labels/ from the hand-placed markers below.

Each region is seeded with a few strokes (polylines) and disks placed by eye
on the images in images/; marker-controlled watershed on the color gradient
then assigns every remaining pixel. Run from this directory:

    python3 annotate.py [--overlay DIR]
"""

import argparse
import os

import cv2
import numpy as np

# region -> list of ("line", [(x, y), ...]) or ("disk", (x, y), radius)
MARKERS = {
    "coffee": [
        # table
        [("line", [(5, 5), (120, 5)]), ("line", [(10, 40), (10, 300)]),
         ("line", [(20, 312), (60, 272)]), ("line", [(400, 30), (470, 30), (470, 300), (420, 312)]),
         ("line", [(380, 10), (470, 10)])],
        # saucer
        [("line", [(80, 190), (95, 240), (150, 278), (250, 292), (325, 272), (365, 235),
                   (375, 180), (350, 130)]), ("line", [(115, 140), (80, 190)])],
        # cup
        [("line", [(150, 75), (180, 38), (235, 24), (290, 32), (318, 65)]),
         ("line", [(148, 110), (150, 135)]), ("line", [(316, 110), (312, 135)]),
         ("line", [(175, 182), (240, 195)]), ("disk", (180, 218), 6)],
        # coffee
        [("disk", (230, 115), 25), ("line", [(185, 110), (280, 110)])],
        # spoon
        [("disk", (290, 228), 14), ("line", [(330, 65), (326, 100)])],
    ],
    "chelsea": [
        # fur
        [("line", [(20, 150), (120, 160)]), ("line", [(150, 50), (300, 40)]),
         ("line", [(60, 250), (200, 280)]), ("line", [(200, 180), (300, 190)]),
         ("line", [(320, 185), (345, 175)]), ("line", [(250, 80), (280, 140)]),
         ("line", [(80, 40), (100, 90)]), ("line", [(345, 60), (350, 100)]),
         ("line", [(350, 200), (355, 240)]), ("line", [(300, 270), (355, 285)])],
        # eyes
        [("disk", (170, 115), 18), ("disk", (318, 135), 12)],
        # nose
        [("disk", (262, 236), 8)],
        # background
        [("line", [(410, 60), (440, 150), (430, 280)]), ("line", [(410, 250), (440, 290)])],
    ],
    "astronaut": [
        # wall
        [("line", [(110, 5), (360, 5)]), ("line", [(100, 40), (110, 180)]),
         ("line", [(290, 90), (305, 170)]), ("line", [(460, 10), (470, 240)]),
         ("line", [(320, 60), (330, 200)])],
        # flag
        [("line", [(15, 30), (30, 200), (20, 380)]), ("line", [(60, 120), (70, 180)])],
        # suit
        [("line", [(60, 300), (110, 430)]), ("line", [(180, 290), (260, 300)]),
         ("line", [(300, 290), (310, 320)]), ("line", [(200, 410), (220, 460)])],
        # face
        [("disk", (210, 110), 20), ("line", [(190, 140), (230, 140)])],
        # hair
        [("line", [(160, 40), (250, 30)]), ("line", [(150, 70), (150, 100)]),
         ("line", [(270, 60), (275, 100)])],
        # helmet
        [("disk", (340, 420), 20), ("disk", (370, 340), 5)],
        # shuttle model
        [("line", [(385, 30), (385, 140)]), ("line", [(365, 100), (365, 220)]),
         ("line", [(410, 60), (412, 200)])],
        # dark backdrop
        [("line", [(360, 280), (470, 285)])],
        # collar
        [("line", [(170, 200), (240, 210)]), ("disk", (118, 200), 4), ("disk", (270, 220), 4)],
    ],
    "china": [
        # sky
        [("line", [(10, 10), (470, 10)]), ("line", [(300, 60), (460, 90)]),
         ("line", [(10, 60), (60, 100)]), ("line", [(250, 80), (400, 130)])],
        # pagoda
        [("line", [(150, 30), (150, 45)]), ("line", [(130, 100), (140, 260)]),
         ("line", [(200, 100), (210, 250)]), ("line", [(100, 200), (230, 200)]),
         ("line", [(180, 288), (200, 292)])],
        # trees
        [("line", [(10, 130), (20, 170)]), ("line", [(10, 260), (80, 300)]),
         ("line", [(60, 305), (150, 315)]), ("line", [(300, 260), (460, 300)]),
         ("line", [(440, 110), (460, 250)])],
        # lake and far shore
        [("line", [(250, 180), (380, 215)]), ("line", [(280, 170), (400, 190)])],
    ],
    "flower": [
        # background
        [("line", [(20, 20), (120, 300)]), ("line", [(350, 20), (460, 200)]),
         ("line", [(100, 20), (350, 20)]), ("line", [(380, 240), (420, 300)]),
         ("line", [(150, 280), (190, 300)])],
        # main bloom
        [("disk", (230, 165), 60)],
        # lower bloom
        [("disk", (275, 305), 10)],
    ],
    "hopper": [
        # wall
        [("line", [(330, 40), (380, 280)]), ("line", [(300, 10), (390, 10)])],
        # flag
        [("line", [(20, 20), (30, 280)]), ("line", [(80, 60), (100, 200)])],
        # jacket
        [("line", [(100, 400), (150, 460)]), ("line", [(280, 350), (380, 450)]),
         ("line", [(60, 320), (70, 380)])],
        # face
        [("disk", (200, 200), 25), ("line", [(160, 240), (250, 240)])],
        # cap
        [("line", [(170, 50), (260, 50)]), ("line", [(150, 80), (280, 90)])],
        # shirt
        [("disk", (215, 390), 5), ("disk", (180, 300), 4)],
    ],
    "motorcycle": [
        # floor
        [("line", [(10, 280), (470, 310)]), ("line", [(10, 230), (60, 260)]),
         ("line", [(450, 250), (460, 240)])],
        # motorcycle
        [("line", [(110, 140), (220, 130)]), ("line", [(260, 140), (310, 150)]),
         ("disk", (135, 215), 30), ("disk", (385, 255), 25), ("disk", (240, 210), 20),
         ("line", [(350, 170), (370, 220)])],
        # garage
        [("line", [(10, 10), (470, 10)]), ("line", [(10, 60), (110, 60)]),
         ("line", [(440, 40), (470, 160)]), ("line", [(410, 140), (430, 170)]),
         ("line", [(30, 150), (40, 190)]), ("line", [(200, 80), (220, 60)]),
         ("line", [(70, 82), (170, 78)]), ("line", [(240, 50), (310, 50)])],
    ],
    "rocket": [
        # sky
        [("line", [(100, 20), (130, 200)]), ("line", [(180, 20), (200, 250)]),
         ("line", [(260, 20), (300, 200)]), ("line", [(360, 20), (400, 220)])],
        # towers
        [("line", [(40, 10), (25, 250)]), ("line", [(440, 20), (450, 250)]),
         ("line", [(150, 150), (150, 280)]), ("line", [(335, 150), (338, 280)])],
        # rocket
        [("line", [(240, 110), (240, 290)])],
        # ground
        [("line", [(10, 315), (470, 315)])],
    ],
    "retina": [
        # surround
        [("disk", (20, 20), 10), ("disk", (460, 20), 10), ("disk", (20, 460), 10),
         ("disk", (460, 460), 10)],
        # fundus
        [("disk", (300, 300), 40), ("disk", (240, 100), 20), ("disk", (40, 300), 10),
         ("disk", (60, 120), 10), ("disk", (100, 400), 10)],
        # optic disc
        [("disk", (75, 215), 15)],
    ],
    "ihc": [
        # epithelium
        [("line", [(50, 50), (200, 100)]), ("line", [(320, 50), (380, 200)]),
         ("line", [(60, 300), (100, 450)]), ("line", [(280, 320), (320, 420)]),
         ("line", [(10, 220), (40, 260)])],
        # stroma
        [("line", [(200, 260), (250, 300)]), ("line", [(420, 120), (440, 350)]),
         ("line", [(180, 350), (220, 460)])],
        # lumen
        [("line", [(10, 320), (15, 440)]), ("line", [(280, 40), (340, 160)]),
         ("line", [(410, 400), (420, 420)])],
    ],
}


def markers_for(name, shape):
    m = np.zeros(shape[:2], np.int32)
    for label, strokes in enumerate(MARKERS[name], start=1):
        for s in strokes:
            if s[0] == "line":
                pts = np.array(s[1], np.int32).reshape(-1, 1, 2)
                cv2.polylines(m, [pts], False, label, thickness=5)
            else:
                cv2.circle(m, s[1], s[2], label, thickness=-1)
    return m


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--overlay", help="write boundary overlays here")
    args = ap.parse_args()
    os.makedirs("labels", exist_ok=True)
    for name in MARKERS:
        img = cv2.imread(f"images/{name}.png")
        smooth = cv2.GaussianBlur(img, (5, 5), 0)
        m = markers_for(name, img.shape)
        cv2.watershed(smooth, m)
        # watershed lines (-1) take the label of a 4-neighbor
        lines = m == -1
        for dy, dx in [(0, 1), (1, 0), (0, -1), (-1, 0)]:
            shifted = np.roll(m, (dy, dx), axis=(0, 1))
            fill = lines & (shifted > 0)
            m[fill] = shifted[fill]
            lines = m == -1
        m[m < 1] = 1
        cv2.imwrite(f"labels/{name}.png", m.astype(np.uint8))
        if args.overlay:
            os.makedirs(args.overlay, exist_ok=True)
            edge = np.zeros(m.shape, bool)
            edge[:, 1:] |= m[:, 1:] != m[:, :-1]
            edge[1:, :] |= m[1:, :] != m[:-1, :]
            out = img.copy()
            out[edge] = (0, 255, 0)
            seeds = markers_for(name, img.shape) > 0
            out[seeds] = (out[seeds] * 0.4 + np.array([255, 0, 255]) * 0.6).astype(np.uint8)
            out = cv2.resize(out, None, fx=2, fy=2, interpolation=cv2.INTER_NEAREST)
            cv2.imwrite(os.path.join(args.overlay, f"{name}.png"), out)
        print(name, "regions", int(m.max()))


if __name__ == "__main__":
    main()
