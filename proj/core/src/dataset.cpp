#include "gsdiff/dataset.hpp"

#include "gsdiff/image_io.hpp"

#include <algorithm>
#include <cinttypes>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

namespace fs = std::filesystem;

namespace gsdiff {

namespace {

struct CameraEntry {
    CameraIntrinsics intrinsics;
    Pose pose;
};

std::map<std::string, CameraEntry> parse_cameras(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw io_error("dataset: cannot open " + path.string());
    std::map<std::string, CameraEntry> cameras;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || line[0] == '#') continue;
        std::istringstream ss(line);
        std::string name;
        CameraEntry e;
        double fx, fy, cx, cy, qw, qx, qy, qz, tx, ty, tz;
        int width, height;
        if (!(ss >> name >> fx >> fy >> cx >> cy >> width >> height >> qw >> qx >>
              qy >> qz >> tx >> ty >> tz))
            throw io_error("dataset: malformed camera line " + std::to_string(line_no) +
                           " in " + path.string());
        std::string trailing;
        if (ss >> trailing)
            throw io_error("dataset: malformed camera line " + std::to_string(line_no) +
                           " in " + path.string() + " (trailing tokens)");
        e.intrinsics = {Real(fx), Real(fy), Real(cx), Real(cy), width, height};
        e.pose.rotation = Quat(Real(qw), Real(qx), Real(qy), Real(qz)).normalized();
        e.pose.translation = Vec3(Real(tx), Real(ty), Real(tz));
        try {
            e.intrinsics.validate();
        } catch (const std::invalid_argument& ex) {
            throw io_error("dataset: camera line " + std::to_string(line_no) + " in " +
                           path.string() + ": " + ex.what());
        }
        cameras[name] = e;
    }
    return cameras;
}

PointCloud parse_points(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw io_error("dataset: cannot open " + path.string());
    PointCloud pc;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || line[0] == '#') continue;
        std::istringstream ss(line);
        double x, y, z, r, g, b;
        if (!(ss >> x >> y >> z >> r >> g >> b))
            throw io_error("dataset: malformed point line " + std::to_string(line_no) +
                           " in " + path.string());
        pc.positions.emplace_back(Real(x), Real(y), Real(z));
        pc.colors.emplace_back(Real(r / 255.0), Real(g / 255.0), Real(b / 255.0));
    }
    return pc;
}

} // namespace

Real camera_bbox_diagonal(std::span<const View> views) {
    if (views.empty()) return 0;
    Vec3 lo = views[0].pose.camera_center(), hi = lo;
    for (const View& v : views) {
        const Vec3 c = v.pose.camera_center();
        lo = lo.cwiseMin(c);
        hi = hi.cwiseMax(c);
    }
    return (hi - lo).norm();
}

SceneDataset load_dataset(const std::string& dir) {
    const fs::path root(dir);
    if (!fs::is_directory(root)) throw io_error("dataset: no such directory: " + dir);

    const auto cameras = parse_cameras(root / "cameras.txt");

    std::vector<fs::path> image_files;
    for (const auto& entry : fs::directory_iterator(root / "images")) {
        const std::string ext = entry.path().extension().string();
        if (ext == ".png" || ext == ".ppm") image_files.push_back(entry.path());
    }
    std::sort(image_files.begin(), image_files.end());
    if (image_files.empty()) throw io_error("dataset: no images in " + dir);

    SceneDataset ds;
    int appearance_id = 0;
    for (const fs::path& file : image_files) {
        const std::string stem = file.stem().string();
        View view;
        view.name = stem;
        view.appearance_id = appearance_id++;
        view.image = read_image(file.string());

        const auto it = cameras.find(stem);
        if (it == cameras.end())
            throw io_error("dataset: view '" + stem + "' has no camera entry");
        view.intrinsics = it->second.intrinsics;
        view.pose = it->second.pose;

        if (view.image.width != view.intrinsics.width ||
            view.image.height != view.intrinsics.height)
            throw io_error("dataset: view '" + stem +
                           "': image dimensions do not match intrinsics");

        const fs::path mask_path = root / "masks" / (stem + ".pgm");
        if (fs::exists(mask_path)) {
            view.mask = read_pgm_mask(mask_path.string());
            if (view.mask->width != view.image.width ||
                view.mask->height != view.image.height)
                throw io_error("dataset: view '" + stem + "': mask dimension mismatch");
        }
        const fs::path depth_path = root / "depth" / (stem + ".pfm");
        if (fs::exists(depth_path)) {
            view.mono_depth = read_pfm(depth_path.string());
            if (view.mono_depth->width != view.image.width ||
                view.mono_depth->height != view.image.height)
                throw io_error("dataset: view '" + stem + "': depth dimension mismatch");
        }
        ds.views.push_back(std::move(view));
    }

    ds.points = parse_points(root / "points3d.txt");
    if (ds.points.positions.empty())
        throw io_error("dataset: points3d.txt holds no points");
    ds.scene_scale = camera_bbox_diagonal(ds.views);
    return ds;
}

void save_dataset(const std::string& dir, const SceneDataset& dataset) {
    const fs::path root(dir);
    fs::create_directories(root / "images");
    bool any_mask = false, any_depth = false;
    for (const View& v : dataset.views) {
        any_mask |= v.mask.has_value();
        any_depth |= v.mono_depth.has_value();
    }
    if (any_mask) fs::create_directories(root / "masks");
    if (any_depth) fs::create_directories(root / "depth");

    std::ofstream cams(root / "cameras.txt");
    if (!cams) throw io_error("dataset: cannot write cameras.txt");
    cams.precision(17);
    for (const View& v : dataset.views) {
        write_png((root / "images" / (v.name + ".png")).string(), v.image);
        if (v.mask) write_pgm_mask((root / "masks" / (v.name + ".pgm")).string(), *v.mask);
        if (v.mono_depth)
            write_pfm((root / "depth" / (v.name + ".pfm")).string(), *v.mono_depth);
        cams << v.name << " " << v.intrinsics.fx << " " << v.intrinsics.fy << " "
             << v.intrinsics.cx << " " << v.intrinsics.cy << " " << v.intrinsics.width
             << " " << v.intrinsics.height << " " << v.pose.rotation.w() << " "
             << v.pose.rotation.x() << " " << v.pose.rotation.y() << " "
             << v.pose.rotation.z() << " " << v.pose.translation.x() << " "
             << v.pose.translation.y() << " " << v.pose.translation.z() << "\n";
    }

    std::ofstream pts(root / "points3d.txt");
    if (!pts) throw io_error("dataset: cannot write points3d.txt");
    pts.precision(17);
    for (size_t i = 0; i < dataset.points.positions.size(); ++i) {
        const Vec3& p = dataset.points.positions[i];
        const Vec3& c = dataset.points.colors[i];
        pts << p.x() << " " << p.y() << " " << p.z() << " "
            << std::lround(double(c.x()) * 255.0) << " "
            << std::lround(double(c.y()) * 255.0) << " "
            << std::lround(double(c.z()) * 255.0) << "\n";
    }
}

} // namespace gsdiff
