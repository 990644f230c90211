"""
Joint angles from motion-capture markers
========================================

Four markers per finger give two vectors, one along the metacarpal and one
along the proximal phalanx. Their angle is the MCP flexion.
"""

import numpy as np
from sonomyo.kinematics import (McpAngles, TriggerStream, align_to_frames,
                                angles_from_stream, mcp_angle)
from sonomyo.synthgen import SessionSpec, marker_positions, synthesize_mocap

# an extended finger, then the same finger flexed by 30 degrees
origin = np.zeros(3)
print(mcp_angle(origin, [1, 0, 0], origin, [-1, 0, 0]))
t = np.radians(30)
print(mcp_angle(origin, [1, 0, 0], origin, [-np.cos(t), -np.sin(t), 0]))

# the display convention adds 180 degrees
print(McpAngles.from_flexion([0, 30, 60, 90]).display_angle)

###############################################################################
# Markers for a whole hand, anywhere in the room
pos = marker_positions([[10, 20, 45, 80]], rotation=np.eye(3), offset=[100, 0, 50])
print([round(mcp_angle(*pos[0, j]), 6) for j in range(4)])

###############################################################################
# A recorded stream at 100 Hz, with a few occluded markers.
# Short gaps are bridged by interpolating the angle in time.
spec = SessionSpec("C8", "fast", duration=4.0)
mocap = synthesize_mocap(spec)
print("occluded marker samples:", int(mocap.occluded.sum()))
angles = angles_from_stream(mocap)

###############################################################################
# Resample onto the 25 Hz ultrasound clock by nearest timestamp
triggers = TriggerStream(spec.frame_times + spec.bridge_latency, range(spec.n_frames))
on_frames = align_to_frames(triggers, angles)
print(on_frames.flexion[:6].round(2))
