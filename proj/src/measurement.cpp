#include "pimap/measurement.hpp"

namespace pimap {

void extract_measurements(MeasurementFrame& frame, const Camera& cam) {
  frame.points.clear();
  const Transform& T = frame.pose.camera_to_map;
  for (int v = 0; v < frame.depth.rows(); ++v) {
    for (int u = 0; u < frame.depth.cols(); ++u) {
      const float d = frame.depth(v, u);
      if (!valid_depth(d)) continue;
      MeasurementPoint m;
      m.pixel = {u, v};
      m.depth = d;
      m.camera_point = unproject_pixel(cam, m.pixel, static_cast<double>(d));
      m.position = T * m.camera_point;
      m.instance = instance_from_pixel(frame.instances(v, u));
      frame.points.push_back(m);
    }
  }
}

}  // namespace pimap
