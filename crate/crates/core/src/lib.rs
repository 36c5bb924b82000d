pub mod graphdec;
pub mod lfunc;
pub mod numeric;
pub mod orb2;
pub mod orb3;
pub mod par;
pub mod ricciflow2d;
pub mod surgeryflow3d;
