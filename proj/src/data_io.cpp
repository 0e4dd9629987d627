#include "xoftr/data_io.hpp"

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

namespace fs = std::filesystem;

namespace xoftr {

namespace {

Grid scale_geometry(const Grid& depth, int rows, int cols) {
    if (depth.empty()) return depth;
    if (depth.rows == rows && depth.cols == cols) return depth;
    // nearest-neighbour keeps invalid zeros from bleeding into valid cells
    return resize_nearest(depth, rows, cols);
}

struct Prepared {
    Grid img, mask, depth;
    double scale = 1.0;
};

Prepared prepare_one(const Grid& img, const Grid& depth, int resize_limit) {
    Prepared p;
    Grid work = img;
    // The limit only ever shrinks: upscaling small inputs distorts scale and
    // wastes quadratic attention memory.
    if (resize_limit > 0 && std::max(img.rows, img.cols) > resize_limit) {
        int longer = std::max(img.rows, img.cols);
        double s = double(resize_limit) / longer;
        int nr = std::max(1, int(std::lround(img.rows * s)));
        int nc = std::max(1, int(std::lround(img.cols * s)));
        if (nr != img.rows || nc != img.cols) work = resize_bilinear(img, nr, nc);
        p.scale = double(std::max(nr, nc)) / longer;
    }
    Grid d = scale_geometry(depth, work.rows, work.cols);
    p.img = pad_to_multiple(work, 8, &p.mask);
    if (!d.empty()) p.depth = pad_to_multiple(d, 8, nullptr);
    return p;
}

}  // namespace

ImagePair make_image_pair(const Grid& a, const Grid& b, const PairMeta* meta, int resize_limit,
                          const std::string& pair_id) {
    if (a.empty() || b.empty()) throw ValidationError("empty image in pair");
    for (const Grid* g : {&a, &b})
        for (double v : g->v)
            if (!(v >= 0.0 && v <= 1.0)) throw ValidationError("intensity outside [0,1]");
    if (meta) {
        if (!meta->depth_a.empty() && !meta->depth_a.same_dims(a))
            throw ValidationError("depth_a dims do not match image_a");
        if (!meta->depth_b.empty() && !meta->depth_b.same_dims(b))
            throw ValidationError("depth_b dims do not match image_b");
    }
    ImagePair out;
    out.pair_id = pair_id;
    Prepared pa = prepare_one(a, meta ? meta->depth_a : Grid(), resize_limit);
    Prepared pb = prepare_one(b, meta ? meta->depth_b : Grid(), resize_limit);
    out.image_a = std::move(pa.img);
    out.image_b = std::move(pb.img);
    out.mask_a = std::move(pa.mask);
    out.mask_b = std::move(pb.mask);
    if (meta) {
        out.has_geometry = true;
        out.depth_a = std::move(pa.depth);
        out.depth_b = std::move(pb.depth);
        out.k_a = meta->k_a;
        out.k_b = meta->k_b;
        // plain x' = s*x rescale: focal lengths and principal point scale by s
        out.k_a.row(0) *= pa.scale;
        out.k_a.row(1) *= pa.scale;
        out.k_b.row(0) *= pb.scale;
        out.k_b.row(1) *= pb.scale;
        out.pose_a = meta->pose_a;
        out.pose_b = meta->pose_b;
    }
    return out;
}

ImagePair load_pair(const std::string& path_a, const std::string& path_b, const PairMeta* meta,
                    int resize_limit) {
    Grid a = load_image_gray(path_a);
    Grid b = load_image_gray(path_b);
    std::string id = fs::path(path_a).stem().string() + "_" + fs::path(path_b).stem().string();
    return make_image_pair(a, b, meta, resize_limit, id);
}

Mat3 sample_homography(int rows, int cols, const HomographyRanges& ranges, SeededStream& rng) {
    double cx = 0.5 * (cols - 1), cy = 0.5 * (rows - 1);
    double half = 0.5 * std::max(rows, cols);
    Mat3 norm = Mat3::Identity();
    norm(0, 0) = norm(1, 1) = 1.0 / half;
    norm(0, 2) = -cx / half;
    norm(1, 2) = -cy / half;
    Mat3 denorm = norm.inverse();

    for (int attempt = 0; attempt < 10; ++attempt) {
        double s = rng.uniform(ranges.scale_lo, ranges.scale_hi);
        double ang = deg2rad(rng.uniform(-ranges.rot_deg, ranges.rot_deg));
        double px = rng.uniform(-ranges.persp, ranges.persp);
        double py = rng.uniform(-ranges.persp, ranges.persp);

        Mat3 sc = Mat3::Identity();
        sc(0, 0) = sc(1, 1) = s;
        Mat3 rot = Mat3::Identity();
        rot(0, 0) = std::cos(ang);
        rot(0, 1) = -std::sin(ang);
        rot(1, 0) = std::sin(ang);
        rot(1, 1) = std::cos(ang);
        Mat3 persp = Mat3::Identity();
        persp(2, 0) = px;
        persp(2, 1) = py;

        Mat3 h = denorm * persp * rot * sc * norm;
        h /= h(2, 2);

        // reject homographies that fold: every corner must keep w > 0 and
        // the determinant must stay well conditioned
        bool ok = std::abs(h.determinant()) > 1e-6;
        for (double x : {0.0, double(cols - 1)})
            for (double y : {0.0, double(rows - 1)}) {
                Vec3 q = h * Vec3(x, y, 1.0);
                if (q.z() < 1e-6) ok = false;
            }
        if (ok) return h;
    }
    throw ValidationError("homography sampling failed to produce a well-conditioned transform");
}

SyntheticPairRecord build_synthetic_pair(const Grid& image, const HomographyRanges& ranges,
                                         uint64_t seed) {
    if (image.empty()) throw ValidationError("build_synthetic_pair: empty image");
    SeededStream rng(seed);
    SyntheticPairRecord rec;
    rec.seed = seed;
    rec.source = image;
    rec.gt_h = sample_homography(image.rows, image.cols, ranges, rng);
    rec.warped = warp_homography(image, rec.gt_h, image.rows, image.cols);
    return rec;
}

namespace {

std::string find_image_file(const fs::path& dir, const std::string& id) {
    for (const char* ext : {".png", ".jpg", ".jpeg", ".bmp"}) {
        fs::path p = dir / (id + ext);
        if (fs::exists(p)) return p.string();
    }
    throw InputError("no image file for id '" + id + "' under " + dir.string());
}

std::string find_depth_file(const fs::path& dir, const std::string& id) {
    for (const char* ext : {".png", ".bin"}) {
        fs::path p = dir / (id + ext);
        if (fs::exists(p)) return p.string();
    }
    throw InputError("no depth file for id '" + id + "' under " + dir.string());
}

struct CalibEntry {
    Mat3 k;
    Mat4 pose;
};

std::map<std::string, CalibEntry> parse_calib(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot open calibration file " + path);
    std::map<std::string, CalibEntry> out;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty() || line[0] == '#') continue;
        std::istringstream ss(line);
        std::string id;
        ss >> id;
        CalibEntry e;
        std::vector<double> vals(25);
        for (auto& v : vals)
            if (!(ss >> v))
                throw InputError(path + ":" + std::to_string(lineno) +
                                 ": expected 25 values (9 intrinsics + 16 pose)");
        for (int i = 0; i < 9; ++i) e.k(i / 3, i % 3) = vals[i];
        for (int i = 0; i < 16; ++i) e.pose(i / 4, i % 4) = vals[9 + i];
        out[id] = e;
    }
    return out;
}

}  // namespace

std::vector<PairDescriptor> scan_dataset(const std::string& root, const std::string& layout) {
    fs::path r(root);
    if (!fs::exists(r)) throw InputError("dataset root does not exist: " + root);
    std::vector<PairDescriptor> out;

    if (layout == "posed") {
        for (const char* sub : {"images", "depth"})
            if (!fs::is_directory(r / sub))
                throw InputError("posed layout missing directory '" + std::string(sub) + "' under " + root);
        fs::path pairs_file = r / "pairs.txt";
        if (!fs::exists(pairs_file))
            throw InputError("posed layout missing pair list 'pairs.txt' under " + root);
        fs::path calib_file = r / "calib.txt";
        if (!fs::exists(calib_file))
            throw InputError("posed layout missing poses file 'calib.txt' under " + root);
        auto calib = parse_calib(calib_file.string());

        std::ifstream in(pairs_file);
        std::string line;
        while (std::getline(in, line)) {
            if (line.empty() || line[0] == '#') continue;
            std::istringstream ss(line);
            std::string ida, idb;
            if (!(ss >> ida >> idb)) throw InputError("bad line in pairs.txt: " + line);
            PairDescriptor d;
            d.pair_id = ida + "_" + idb;
            d.image_a = find_image_file(r / "images", ida);
            d.image_b = find_image_file(r / "images", idb);
            d.depth_a = find_depth_file(r / "depth", ida);
            d.depth_b = find_depth_file(r / "depth", idb);
            auto ca = calib.find(ida), cb = calib.find(idb);
            if (ca == calib.end() || cb == calib.end())
                throw InputError("calib.txt has no entry for pair " + d.pair_id);
            d.has_calib = true;
            d.k_a = ca->second.k;
            d.k_b = cb->second.k;
            d.pose_a = ca->second.pose;
            d.pose_b = cb->second.pose;
            out.push_back(std::move(d));
        }
        std::sort(out.begin(), out.end(),
                  [](const PairDescriptor& x, const PairDescriptor& y) { return x.pair_id < y.pair_id; });
        return out;
    }

    if (layout == "aligned") {
        for (const char* sub : {"vis", "tir"})
            if (!fs::is_directory(r / sub))
                throw InputError("aligned layout missing directory '" + std::string(sub) + "' under " + root);
        std::vector<std::string> names;
        for (const auto& e : fs::directory_iterator(r / "vis"))
            if (e.is_regular_file()) names.push_back(e.path().filename().string());
        std::sort(names.begin(), names.end());
        for (const auto& n : names) {
            fs::path other = r / "tir" / n;
            if (!fs::exists(other)) continue;  // unpaired files are skipped
            PairDescriptor d;
            d.pair_id = fs::path(n).stem().string();
            d.image_a = (r / "vis" / n).string();
            d.image_b = other.string();
            out.push_back(std::move(d));
        }
        return out;
    }

    throw ValidationError("unknown dataset layout '" + layout + "' (expected posed|aligned)");
}

PairMeta load_meta(const PairDescriptor& d) {
    if (!d.has_calib) throw ValidationError("descriptor has no calibration: " + d.pair_id);
    PairMeta m;
    m.k_a = d.k_a;
    m.k_b = d.k_b;
    m.pose_a = d.pose_a;
    m.pose_b = d.pose_b;
    if (!d.depth_a.empty()) m.depth_a = load_depth(d.depth_a);
    if (!d.depth_b.empty()) m.depth_b = load_depth(d.depth_b);
    return m;
}

Grid load_image_gray(const std::string& path) {
    cv::Mat m = cv::imread(path, cv::IMREAD_GRAYSCALE);
    if (m.empty()) throw InputError("cannot read image " + path);
    Grid g(m.rows, m.cols);
    for (int r = 0; r < m.rows; ++r)
        for (int c = 0; c < m.cols; ++c) g.at(r, c) = m.at<uint8_t>(r, c) / 255.0;
    return g;
}

ImageRGB load_image_rgb(const std::string& path) {
    cv::Mat m = cv::imread(path, cv::IMREAD_COLOR);  // BGR
    if (m.empty()) throw InputError("cannot read image " + path);
    ImageRGB img;
    img.r = Grid(m.rows, m.cols);
    img.g = Grid(m.rows, m.cols);
    img.b = Grid(m.rows, m.cols);
    for (int r = 0; r < m.rows; ++r)
        for (int c = 0; c < m.cols; ++c) {
            auto px = m.at<cv::Vec3b>(r, c);
            img.b.at(r, c) = px[0] / 255.0;
            img.g.at(r, c) = px[1] / 255.0;
            img.r.at(r, c) = px[2] / 255.0;
        }
    return img;
}

void save_image_gray(const std::string& path, const Grid& img) {
    cv::Mat m(img.rows, img.cols, CV_8UC1);
    for (int r = 0; r < img.rows; ++r)
        for (int c = 0; c < img.cols; ++c)
            m.at<uint8_t>(r, c) = uint8_t(std::lround(clamp01(img.at(r, c)) * 255.0));
    if (!cv::imwrite(path, m)) throw InputError("cannot write image " + path);
}

Grid load_depth(const std::string& path) {
    std::string ext = fs::path(path).extension().string();
    if (ext == ".bin") {
        std::ifstream in(path, std::ios::binary);
        if (!in) throw InputError("cannot read depth file " + path);
        int32_t rows = 0, cols = 0;
        in.read(reinterpret_cast<char*>(&rows), 4);
        in.read(reinterpret_cast<char*>(&cols), 4);
        if (!in || rows <= 0 || cols <= 0) throw InputError("bad depth header in " + path);
        std::vector<float> buf(size_t(rows) * cols);
        in.read(reinterpret_cast<char*>(buf.data()), std::streamsize(buf.size() * 4));
        if (!in) throw InputError("truncated depth data in " + path);
        Grid g(rows, cols);
        for (size_t i = 0; i < buf.size(); ++i) g.v[i] = buf[i];
        return g;
    }
    cv::Mat m = cv::imread(path, cv::IMREAD_UNCHANGED);
    if (m.empty()) throw InputError("cannot read depth image " + path);
    if (m.type() != CV_16UC1) throw InputError("depth PNG must be 16-bit single channel: " + path);
    Grid g(m.rows, m.cols);
    for (int r = 0; r < m.rows; ++r)
        for (int c = 0; c < m.cols; ++c) g.at(r, c) = m.at<uint16_t>(r, c) / 1000.0;  // mm -> units
    return g;
}

void save_depth_png16(const std::string& path, const Grid& depth) {
    cv::Mat m(depth.rows, depth.cols, CV_16UC1);
    for (int r = 0; r < depth.rows; ++r)
        for (int c = 0; c < depth.cols; ++c) {
            double mm = depth.at(r, c) * 1000.0;
            m.at<uint16_t>(r, c) = uint16_t(std::clamp(std::lround(mm), 0l, 65535l));
        }
    if (!cv::imwrite(path, m)) throw InputError("cannot write depth image " + path);
}

void save_depth_bin(const std::string& path, const Grid& depth) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw InputError("cannot write depth file " + path);
    int32_t rows = depth.rows, cols = depth.cols;
    out.write(reinterpret_cast<const char*>(&rows), 4);
    out.write(reinterpret_cast<const char*>(&cols), 4);
    std::vector<float> buf(depth.v.begin(), depth.v.end());
    out.write(reinterpret_cast<const char*>(buf.data()), std::streamsize(buf.size() * 4));
}

}  // namespace xoftr
